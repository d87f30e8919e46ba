import numpy as np
import pytest
from hypothesis import given, strategies as st

from masskit.chem import (
    Atom,
    Bond,
    MolecularGraph,
    SmilesError,
    UnsupportedFeatureError,
    ValenceError,
    canonical_key,
    murcko_scaffold,
    parse_smiles,
    permute_graph,
    read_molecule_file,
    scaffold_key,
    write_molecule_file,
)
from masskit.corpus import generate_corpus

from conftest import CORPUS20, CORPUS20_SMILES


class TestParse:
    def test_ethanol(self):
        g = parse_smiles("CCO")
        assert [a.element for a in g.atoms] == ["C", "C", "O"]
        assert [a.implicit_h_count for a in g.atoms] == [3, 2, 1]
        assert {(b.begin, b.end, b.order) for b in g.bonds} == {(0, 1, "single"), (1, 2, "single")}

    def test_methane(self):
        g = parse_smiles("C")
        assert g.n_atoms == 1 and g.atoms[0].implicit_h_count == 4

    def test_cyclopropane_ring_flags(self):
        g = parse_smiles("C1CC1")
        assert g.n_atoms == 3 and len(g.bonds) == 3
        assert all(a.in_ring for a in g.atoms)
        assert all(b.in_ring for b in g.bonds)

    @pytest.mark.parametrize("text", ["C(", "C)", "C1CC", "CC(C", "", "C==C", "[C", "Xy", "C%1"])
    def test_malformed(self, text):
        with pytest.raises(SmilesError):
            parse_smiles(text)

    @pytest.mark.parametrize("text", ["C[C@H](N)O", "F/C=C/F", "[13CH4]", "CC.O", "*C"])
    def test_unsupported(self, text):
        with pytest.raises(UnsupportedFeatureError):
            parse_smiles(text)

    @pytest.mark.parametrize("text", ["[Na+].[Cl-]", "[Si]", "B"])
    def test_unsupported_element_is_an_error(self, text):
        with pytest.raises(SmilesError):
            parse_smiles(text)

    @pytest.mark.parametrize("text", ["C(C)(C)(C)(C)C", "O=O=O", "FF(F)"])
    def test_valence_exceeded(self, text):
        with pytest.raises(ValenceError):
            parse_smiles(text)

    @pytest.mark.parametrize("smiles,formula", CORPUS20)
    def test_hydrogen_conservation(self, smiles, formula):
        assert parse_smiles(smiles).formula() == formula

    def test_aromatic_bonds(self):
        g = parse_smiles("c1ccccc1-c1ccccc1")
        orders = sorted(b.order for b in g.bonds)
        assert orders.count("aromatic") == 12
        assert orders.count("single") == 1
        biaryl = [b for b in g.bonds if b.order == "single"][0]
        assert not biaryl.in_ring

    def test_charges(self):
        g = parse_smiles("C[N+](C)(C)C")
        n = g.atoms[1]
        assert n.formal_charge == 1 and n.implicit_h_count == 0
        assert parse_smiles("[O-]C=O").atoms[0].formal_charge == -1

    def test_ring_closure_with_bond_order(self):
        g = parse_smiles("C=1CCC1")
        assert g.bond_between(0, 3).order == "double"

    def test_two_digit_ring_label(self):
        assert parse_smiles("C%12CC%12").n_atoms == 3

    @pytest.mark.parametrize("smiles", CORPUS20_SMILES)
    def test_determinism(self, smiles):
        assert parse_smiles(smiles) == parse_smiles(smiles)

    @pytest.mark.parametrize("smiles", CORPUS20_SMILES)
    def test_connected(self, smiles):
        assert parse_smiles(smiles).is_connected()


class TestGraphInvariants:
    def test_rejects_self_loop(self):
        with pytest.raises(ValueError):
            MolecularGraph((Atom("C"),), (Bond(0, 0),))

    def test_rejects_duplicate_bond(self):
        with pytest.raises(ValueError):
            MolecularGraph((Atom("C"), Atom("C")), (Bond(0, 1), Bond(1, 0)))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            MolecularGraph((Atom("C"),), (Bond(0, 3),))


class TestScaffold:
    def test_acyclic_is_empty(self):
        s = murcko_scaffold(parse_smiles("CCO"))
        assert s.n_atoms == 0
        assert canonical_key(s) == ""

    def test_toluene_gives_benzene(self):
        s = murcko_scaffold(parse_smiles("c1ccccc1C"))
        assert canonical_key(s) == canonical_key(parse_smiles("c1ccccc1"))

    def test_linker_retained(self):
        s = murcko_scaffold(parse_smiles("C1CC1CCC1CC1"))
        assert s.n_atoms == 8
        assert canonical_key(s) == canonical_key(parse_smiles("C1CC1CCC1CC1"))

    def test_substituents_become_hydrogens(self):
        s = murcko_scaffold(parse_smiles("OC1CCNCC1"))
        assert s.formula() == {"C": 5, "H": 11, "N": 1}

    @pytest.mark.parametrize("smiles", CORPUS20_SMILES)
    def test_idempotent(self, smiles):
        once = murcko_scaffold(parse_smiles(smiles))
        assert canonical_key(murcko_scaffold(once)) == canonical_key(once)

    def test_scaffold_key_accepts_text(self):
        assert scaffold_key("Cc1ccccc1") == scaffold_key(parse_smiles("c1ccccc1O"))


class TestCanonicalKey:
    def test_rotated_ring(self):
        assert canonical_key(parse_smiles("C1CCOCC1")) == canonical_key(parse_smiles("O1CCCCC1"))

    def test_benzene_vs_cyclohexane(self):
        assert canonical_key(parse_smiles("c1ccccc1")) != canonical_key(parse_smiles("C1CCCCC1"))

    def test_isomers_differ(self):
        assert canonical_key(parse_smiles("CCCO")) != canonical_key(parse_smiles("CC(C)O"))

    def test_relabeling_over_corpus(self):
        # 20 molecules x 100 random relabelings
        rng = np.random.default_rng(7)
        molecules = CORPUS20_SMILES + [s for _, s in generate_corpus(10, seed=3)]
        for smiles in molecules[:20] + molecules[-10:]:
            g = parse_smiles(smiles)
            key = canonical_key(g)
            for _ in range(100):
                perm = [int(i) for i in rng.permutation(g.n_atoms)]
                assert canonical_key(permute_graph(g, perm)) == key

    @given(st.integers(0, 2**32 - 1))
    def test_relabeling_property(self, seed):
        rng = np.random.default_rng(seed)
        smiles = CORPUS20_SMILES[seed % len(CORPUS20_SMILES)]
        g = parse_smiles(smiles)
        perm = [int(i) for i in rng.permutation(g.n_atoms)]
        assert canonical_key(permute_graph(g, perm)) == canonical_key(g)

    def test_highly_symmetric_graphs(self):
        # cubane-like cage and a 12-ring stress the tie-break search
        for smiles in ("C12C3C4C1C5C2C3C45", "C1CCCCCCCCCCC1", "c1cc2ccc3cccc4ccc(c1)c2c34"):
            g = parse_smiles(smiles)
            rng = np.random.default_rng(1)
            keys = {canonical_key(permute_graph(g, [int(i) for i in rng.permutation(g.n_atoms)])) for _ in range(10)}
            assert len(keys) == 1


class TestMoleculeFile:
    def test_round_trip(self, tmp_path):
        recs = [("a", "CCO"), ("b", "c1ccccc1")]
        write_molecule_file(tmp_path / "m.tsv", recs)
        assert read_molecule_file(tmp_path / "m.tsv") == recs

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "m.tsv"
        p.write_text("a CCO\n")
        with pytest.raises(ValueError, match=":1:"):
            read_molecule_file(p)


class TestCorpus:
    def test_deterministic_and_distinct(self):
        a = generate_corpus(40, seed=5)
        assert a == generate_corpus(40, seed=5)
        keys = {canonical_key(parse_smiles(s)) for _, s in a}
        assert len(keys) == 40

    def test_size_cap(self):
        for _, s in generate_corpus(60, seed=2, max_heavy_atoms=20):
            assert parse_smiles(s).n_atoms <= 20
