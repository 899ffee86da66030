import numpy as np
import pytest

from proxdtr.categorical import CategoricalNet, Cpt, exact_joint, marginalize, paper_net
from proxdtr.oracle import regime_spectrum


@pytest.fixture(scope="session")
def net():
    return paper_net()


@pytest.fixture(scope="session")
def observed_joint(net):
    return marginalize(exact_joint(net), net.observed)


@pytest.fixture(scope="session")
def spectrum(net):
    return regime_spectrum(net)


def unconfound(net: CategoricalNet) -> CategoricalNet:
    """Copy of ``net`` whose latent variables no longer influence anything."""
    latent = {v.name for v in net.variables if v.latent}
    cpts = {}
    for name, cpt in net.cpts.items():
        shape = [net.card(p) for p in cpt.parents] + [net.card(name)]
        table = np.array(cpt.table).reshape(shape)
        for i, p in enumerate(cpt.parents):
            if p in latent:
                table = np.repeat(np.take(table, [0], axis=i), shape[i], axis=i)
        cpts[name] = Cpt(name, cpt.parents, table.reshape(cpt.table.shape))
    return net.replace_cpts(cpts)


def with_cpt(net: CategoricalNet, name: str, rows) -> CategoricalNet:
    cpt = net.cpts[name]
    table = np.broadcast_to(np.asarray(rows, dtype=float), cpt.table.shape)
    return net.replace_cpts({name: Cpt(name, cpt.parents, table)})
