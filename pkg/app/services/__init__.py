# Services module initialization
# Numerical pipelines: drivers, Donsker field, Volterra solves, adjoints, checkers, portfolios