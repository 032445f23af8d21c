#!/usr/bin/env python3
"""
Configuration validation script.

Loads a lab configuration file, validates it and prints the effective
configuration, including every default the file leaves out.
"""

import sys
import os
import argparse

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from src.config import ConfigurationError, load_logging_config, parse_config
from src.experiment import compute_run_id
from src.logging_config import setup_logging


def main(argv=None) -> bool:
    """Validate the configuration named on the command line."""
    parser = argparse.ArgumentParser(description='Validate a SMaRt lab configuration file')
    parser.add_argument('config', nargs='?', help='Flat key = value file (defaults only when omitted)')
    args = parser.parse_args(argv)

    print("🔍 SMaRt lab configuration check")
    print("=" * 50)

    try:
        setup_logging(load_logging_config())
        print(f"📋 Loading {args.config or 'built-in defaults'}...")
        config = parse_config(args.config)
        print("✅ Configuration valid")

        flat = config.to_flat()
        print(f"\n📊 Effective configuration (run id {compute_run_id(flat)}):")
        print("-" * 30)
        width = max(len(key) for key in flat)
        for key, value in flat.items():
            print(f"  {key:<{width}} = {value}")

        smart = config.smart
        if smart.enabled:
            print(f"\n🧮 Regularity: lambda {smart.lambda_score}, t in [{smart.t_lo}, {smart.t_hi}], "
                  f"every {smart.freq} iterations, {smart.jacobian.value} Jacobian")
            print(f"   {-(-config.gan.iters // smart.freq)} regularity calls over {config.gan.iters} iterations")
        else:
            print("\n🧮 Regularity disabled")
        return True

    except ConfigurationError as e:
        print(f"❌ Configuration error: {e}")
        return False


if __name__ == '__main__':
    success = main()
    sys.exit(0 if success else 1)
