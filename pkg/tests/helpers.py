"""Small builders for hand-made DAGs."""

from dagbft.dag import DagView
from dagbft.types import Config, SimulatedSigner, make_block


class DagBuilder:
    """Builds rounds of signed blocks; ``refs`` name (round, creator) pairs."""

    def __init__(self, n=4, f=1):
        self.cfg = Config(n, f, 100.0)
        self.signer = SimulatedSigner()
        self.blocks = {}

    def add(self, rnd, creator, strong=None, weak=(), payload=b""):
        if strong is None:
            strong = [(rnd - 1, c) for c in range(self.cfg.n) if (rnd - 1, c) in self.blocks] if rnd > 1 else []
        b = make_block(rnd, creator, [self.blocks[k].id for k in strong], [self.blocks[k].id for k in weak],
                       payload or bytes([rnd, creator]), self.signer)
        self.blocks[(rnd, creator)] = b
        return b

    def view(self, upto=None):
        v = DagView(self.cfg, self.signer)
        for (rnd, _), b in sorted(self.blocks.items()):
            if upto is None or rnd <= upto:
                v.insert(b)
        return v
