"""Privacy-preserving federated traffic prediction, desk-scale.

Subsystems:

* :mod:`secfed.phe` -- additively homomorphic encryption with split decryption
* :mod:`secfed.keydist` -- two-party partial-key distribution over encrypted coordinates
* :mod:`secfed.gru` / :mod:`secfed.flcore` -- online GRU learner and federated-averaging core
* :mod:`secfed.dhfa` -- the distributed encrypted averaging protocol
* :mod:`secfed.ledger` -- deterministic two-tier permissioned-ledger simulation
* :mod:`secfed.simulate` / :mod:`secfed.cli` -- orchestration, benchmarks, reports
"""

__version__ = "0.1.0"
