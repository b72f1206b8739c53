import pytest

from pstore.errors import InvalidPath
from pstore.ipns import IpnsRecord, KeyPair, better_record, name_for_public_key, parse_name


def keys(n=1):
    return KeyPair.from_seed(bytes([n]) * 32)


def test_name_is_hash_of_public_key():
    k = keys()
    assert k.name == name_for_public_key(k.public_bytes)
    assert k.name.text.startswith("Qm")
    assert parse_name(k.name.text) == k.name
    assert KeyPair.from_seed(k.seed_bytes()).name == k.name


def test_bad_name_rejected():
    with pytest.raises(InvalidPath):
        parse_name("not-a-name!")


def test_signed_record_verifies_and_tampering_fails():
    k = keys()
    rec = IpnsRecord.create(k, "/ipfs/QmX", 3, 100.0)
    assert rec.verify()
    assert not IpnsRecord(rec.name, "/ipfs/QmY", 3, rec.public_key, rec.signature, 100.0).verify()
    assert not IpnsRecord(rec.name, rec.value, 4, rec.public_key, rec.signature, 100.0).verify()
    other = keys(2)
    # a valid signature under the wrong key for this name
    forged = IpnsRecord.create(other, "/ipfs/QmEvil", 9, 100.0)
    assert not IpnsRecord(rec.name, forged.value, 9, forged.public_key, forged.signature, 100.0).verify()


def test_better_record_prefers_valid_higher_sequence():
    k = keys()
    v1 = IpnsRecord.create(k, "/ipfs/a", 1, 100.0)
    v2 = IpnsRecord.create(k, "/ipfs/b", 2, 100.0)
    assert better_record(v1, None, 0)
    assert better_record(v2, v1, 0)
    assert not better_record(v1, v2, 0)
    expired = IpnsRecord.create(k, "/ipfs/c", 5, 10.0)
    assert not better_record(expired, v2, 20.0)
    bad = IpnsRecord(v2.name, "/ipfs/evil", 7, v2.public_key, v2.signature, 100.0)
    assert not better_record(bad, v2, 0)
