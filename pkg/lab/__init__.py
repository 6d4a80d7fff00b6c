# CBUS lab app initialization
