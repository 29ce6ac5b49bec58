# Utilities package for gammaphase
