import pytest

from chain.config import FeePolicy
from chain.embedding import build_staged_pair
from chain.errors import RejectedNonstandard, UnknownNode
from chain.hashing import hash160
from chain.script import p2pkh_script
from chain.secp256k1 import PrivateKey
from chain.wallet import Funding
from tithonus.transport import Intent, Mode, Transport, TransportMode, choose_mode


def _pair(net, rng, fee_rate=None):
    key = PrivateKey.random(rng)
    outpoint, output = net.fund(p2pkh_script(hash160(key.public_key)), 200_000)
    return build_staged_pair(rng.randbytes(400), Funding(outpoint, output.value, key), FeePolicy(), fee_rate=fee_rate)


def test_choose_mode():
    policy = FeePolicy(min_fee_rate=2, standard_fee_rate=12)
    assert choose_mode(Intent.INTERACTIVE, policy) == TransportMode(Mode.SWIFT, 2)
    assert choose_mode("asynchronous", policy) == TransportMode(Mode.ON_CHAIN, 12)
    with pytest.raises(ValueError):
        choose_mode("sofort", policy)


def test_swift_submit_and_confirmation(small_net, rng, policy):
    """Swift-Tx liegt sofort im Mempool; confirmed_at erst nach dem Block."""
    transport = Transport(small_net, 0, policy)
    pair = _pair(small_net, rng)
    receipts = transport.submit_all([pair.staging, pair.writing], choose_mode(Intent.INTERACTIVE, policy))
    assert [r.txid for r in receipts] == [pair.staging_txid, pair.writing_txid]
    assert all(r.confirmed_at is None and r.mode.mode == Mode.SWIFT for r in receipts)
    assert pair.writing_txid in small_net.mempool_query(0)

    small_net.run_to_quiescence()
    assert transport.refresh(receipts[1]).confirmed_at is None
    block = small_net.mine()
    confirmed = transport.receipts()
    assert all(r.confirmed_at == block.tick for r in confirmed)
    assert all(r.confirmed_at >= r.injected_at for r in confirmed)


def test_on_chain_mode_needs_standard_fee(small_net, rng, policy):
    """Eine mit 1 sat/B gebaute Tx verletzt die on-chain Rate von 9 sat/B."""
    transport = Transport(small_net, 1, policy)
    on_chain = choose_mode(Intent.ASYNCHRONOUS, policy)
    cheap = _pair(small_net, rng)
    with pytest.raises(RejectedNonstandard):
        transport.submit(cheap.staging, on_chain)
    assert transport.receipts() == []

    pair = _pair(small_net, rng, fee_rate=on_chain.fee_rate)
    receipt = transport.submit(pair.staging, on_chain)
    assert receipt.mode.fee_rate == 9
    assert pair.staging_txid in small_net.mempool_query(1)


def test_transport_requires_known_node(small_net, policy):
    with pytest.raises(UnknownNode):
        Transport(small_net, 1_000, policy)
