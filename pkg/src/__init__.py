# SMaRt toy laboratory
