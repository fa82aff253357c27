# Active Damage Interrogation Service
# Structural health monitoring from actuator/sensor transfer-function signatures
