"""Mixed-strategy generalized Nash equilibria of mixed-integer games."""
