"""Rewrites forced past their gates, for checking that the harness notices."""
import dataclasses
from unittest import mock

from dedalus_opt.analysis import DistributionPolicy, PartitionKey
from dedalus_opt.corpus import load_program
from dedalus_opt.evaluator import InputFact as I
from dedalus_opt.rewrites import SplitPlan, _decouple, desugar_seal, partition, partition_sealed


def unbatched_register():
    reg = load_program("toys/register.dl")
    # state-machine decoupling without its batching: forwarded requests reorder
    rew = _decouple(reg, SplitPlan("reg", (0,), (1, 2, 3, 4), "regsm", ("r2",)), {}, False).program
    return reg, rew, [I("in", ("a",), "r1", 0), I("in", ("b",), "r1", 0), I("in", ("c",), "r1", 1)], 40, None


def value_keyed_storage():
    ck = load_program("toys/checker.dl")
    pol = DistributionPolicy(
        {"toStorage": PartitionKey(0), "hashset": PartitionKey(1), "collisions": PartitionKey(0), "numCollisions": PartitionKey(1)},
        ("s1a", "s1b", "s2a", "s2b"),
    )
    with mock.patch("dedalus_opt.rewrites._check_policy"):
        rew = partition(ck, "storage", pol, {"s1": ("s1a", "s1b"), "s2": ("s2a", "s2b")}).program
    return ck, rew, [I("in", ("apple",), "leader1", 0), I("in", ("pear",), "leader1", 5)], 40, None


def early_seal():
    sn = load_program("toys/snapshot.dl")
    rew = partition_sealed(sn, SplitPlan("kv", (0, 1, 2, 3), (4, 5, 6), "kvcoord", ("kc",)), {"k1": ("k1a", "k1b")}).program
    # the receiver believes there is one partition and seals on the first share
    rew = dataclasses.replace(rew, facts=tuple((n, (1,)) if n == "numPartitions" else (n, v) for n, v in rew.facts))
    ins = [I("in", ("x", 10), "g1", 0), I("in", ("y", 20), "g1", 0), I("snap", (1,), "g1", 1)]
    return desugar_seal(sn), rew, ins, 80, 4


HARNESS_CONTROLS = {"unbatched-register": unbatched_register, "value-keyed-storage": value_keyed_storage, "early-seal": early_seal}
