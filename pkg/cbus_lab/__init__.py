# CBUS simulation lab project
