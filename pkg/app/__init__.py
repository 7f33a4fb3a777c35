# Insider Volterra control package