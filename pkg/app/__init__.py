"""PMU event identification - Markov transition fields and an SPP-aided CNN."""
