import pytest

from rtvdc.registry import Registry, RegistryError, TextRegistryStore, VehicleStatus, hash_credentials


def test_register_and_owners():
    reg = Registry()
    reg.register("user", 7, "pw", (1, 2))
    v = reg.register("vehicle", 1, "k")
    assert v.owners == {7}
    assert v.status is VehicleStatus.REGISTERED
    assert reg.owners_of(2) == {7} and reg.owners_of(3) == set()
    assert reg.users[7].credentials_hash == hash_credentials("pw") != "pw"


@pytest.mark.parametrize("kind,ident,code", [("vehicle", 0, "bad-id"), ("user", -1, "bad-id")])
def test_bad_ids(kind, ident, code):
    with pytest.raises(RegistryError) as ei:
        Registry().register(kind, ident, "x")
    assert ei.value.code == code


def test_duplicate_rejected():
    reg = Registry()
    reg.register("vehicle", 1, "a")
    with pytest.raises(RegistryError, match="already-registered"):
        reg.register("vehicle", 1, "b")
    reg.register("user", 1, "b")


def test_unknown_kind():
    with pytest.raises(ValueError):
        Registry().register("truck", 1, "a")


def test_store_round_trip(tmp_path):
    path = tmp_path / "reg" / "registry.txt"
    reg = Registry(TextRegistryStore(path))
    reg.register("vehicle", 3, "k")
    reg.register("user", 9, "pw", (3, 4))
    again = Registry(TextRegistryStore(path))
    assert set(again.vehicles) == {3} and again.users[9].vehicle_ids == (3, 4)
    assert again.vehicles[3].owners == {9}
    assert again.vehicles[3].credentials_hash == hash_credentials("k")
    assert "k\t" not in path.read_text()


def test_store_rejects_malformed(tmp_path):
    path = tmp_path / "r.txt"
    path.write_text("# comment\n\nvehicle\t1\tabc\t\nbogus line\n")
    with pytest.raises(ValueError, match=":4:"):
        TextRegistryStore(path).load()


def test_runtime_state_not_persisted(tmp_path):
    path = tmp_path / "r.txt"
    reg = Registry(TextRegistryStore(path))
    reg.register("vehicle", 1, "k").status = VehicleStatus.RUNNING
    assert Registry(TextRegistryStore(path)).vehicles[1].status is VehicleStatus.REGISTERED
