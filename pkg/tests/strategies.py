"""Hypothesis strategies shared by several test modules."""

from hypothesis import strategies as st

from epdgscan.ike import IkeSaInitConfig, TransformSet
from epdgscan.ike.codec import AEAD_ENCRYPTION
from epdgscan.ike.groups import SUPPORTED_GROUPS

ENCRYPTION = st.one_of(
    st.tuples(st.just(12), st.sampled_from([128, 192, 256])),  # AES-CBC
    st.tuples(st.just(20), st.sampled_from([128, 256])),  # AES-GCM-16
    st.tuples(st.just(3), st.none()),  # 3DES, no key length attribute
)


@st.composite
def transform_sets(draw, groups=st.sampled_from(SUPPORTED_GROUPS)):
    enc = tuple(draw(st.lists(ENCRYPTION, min_size=1, max_size=4, unique=True)))
    aead_only = all(eid in AEAD_ENCRYPTION for eid, _ in enc)
    integ = draw(st.lists(st.sampled_from([2, 12, 13, 14]), min_size=0 if aead_only else 1, max_size=3, unique=True))
    return TransformSet(
        encryption=enc,
        prf=tuple(draw(st.lists(st.sampled_from([2, 5, 6, 7]), min_size=1, max_size=3, unique=True))),
        integrity=tuple(integ),
        dh_groups=tuple(draw(st.lists(groups, min_size=1, max_size=4, unique=True))),
    )


@st.composite
def sa_init_configs(draw):
    proposals = tuple(draw(st.lists(transform_sets(), min_size=1, max_size=4)))
    offered = sorted({g for ts in proposals for g in ts.dh_groups})
    return IkeSaInitConfig(
        proposals=proposals,
        dh_group_for_ke=draw(st.sampled_from(offered)),
        nonce_length=draw(st.integers(16, 256)),
        source_port=draw(st.none() | st.integers(1024, 65535)),
    )
