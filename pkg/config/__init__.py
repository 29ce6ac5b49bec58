# Configuration package for gammaphase
