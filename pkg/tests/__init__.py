# Stopping solver tests
