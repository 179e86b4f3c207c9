# Blueprints of the results service
