from dataclasses import dataclass, field

import numpy as np
import pytest
from hypothesis import given, strategies as st

from masskit.chem import parse_smiles, permute_graph
from masskit.evalkit import (
    CESweepRow,
    CESweepTable,
    LibraryEntry,
    MissingCandidateError,
    ScaffoldOverlapError,
    aggregate_seeds,
    build_reference_set,
    ce_sweep,
    ce_trend,
    heteroatom_attention,
    heteroatom_ratios,
    rank_queries,
    similarity_eval,
)
from masskit.fragsim import make_metadata, simulate_spectrum
from masskit.graphprep import prepare
from masskit.model import AttentionMap, ModelConfig, Predictor, init_params
from masskit.spectra import BinnedSpectrum, SpectrumMetadata, bin_spectrum

from conftest import CORPUS20_SMILES

MD = SpectrumMetadata(30.0, "[M+H]+", "HCD", 200.0)


@dataclass
class Spec:
    metadata: SpectrumMetadata


@dataclass
class Rec:
    compound_id: str
    target: np.ndarray
    spectrum: Spec = field(default_factory=lambda: Spec(MD))


def passthrough(records):
    return np.stack([r.target for r in records])


def random_records(rng, n, m=40, prefix="q", md=MD):
    return [Rec(f"{prefix}{k}", rng.uniform(size=m) * (rng.uniform(size=m) < 0.3) + np.eye(m)[k % m], Spec(md)) for k in range(n)]


class OracleModel:
    """Predicts the synthetic oracle spectrum directly."""

    def __init__(self, smiles_of):
        self.smiles_of = smiles_of

    def predict_spectrum(self, prepared, md):
        g = parse_smiles(self.smiles_of[id(prepared)])
        return bin_spectrum(simulate_spectrum(g, md), m=600)


class TestSimilarity:
    def test_passthrough(self, rng):
        rep = similarity_eval(passthrough, random_records(rng, 8))
        assert rep.mean == pytest.approx(1.0, abs=1e-15) and rep.sd < 1e-15

    def test_uniform_vs_one_hot(self):
        m = 25
        recs = [Rec(f"c{k}", np.eye(m)[k]) for k in range(m)]
        rep = similarity_eval(lambda rs: np.ones((len(rs), m)), recs)
        np.testing.assert_allclose(rep.per_spectrum, 1 / np.sqrt(m), rtol=1e-14)

    def test_per_compound_mean(self):
        recs = [Rec("a", np.array([1.0, 0.0])), Rec("a", np.array([0.0, 1.0])), Rec("b", np.array([1.0, 0.0]))]
        rep = similarity_eval(lambda rs: np.tile([1.0, 0.0], (len(rs), 1)), recs)
        assert rep.per_compound() == {"a": 0.5, "b": 1.0}
        assert rep.mean == pytest.approx(2 / 3)
        assert rep.compound_mean == 0.75

    def test_empty(self):
        with pytest.raises(ValueError):
            similarity_eval(passthrough, [])

    def test_seed_aggregate(self, rng):
        recs = random_records(rng, 5)
        a = similarity_eval(passthrough, recs)
        b = similarity_eval(lambda rs: np.ones((len(rs), 40)), recs)
        mean, sd = aggregate_seeds([a, b])
        assert mean == pytest.approx((a.mean + b.mean) / 2)
        assert sd == pytest.approx(abs(a.mean - b.mean) / 2)

    def test_csv(self, tmp_path, rng):
        similarity_eval(passthrough, random_records(rng, 3)).write_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "level,mean,sd,n" and lines[1].startswith("spectrum,1.0")


class TestReferenceSet:
    def test_cardinality(self, rng):
        held = random_records(rng, 10, prefix="h")
        decoys = random_records(rng, 50, prefix="d")
        refs = build_reference_set(held, passthrough, decoys)
        assert len(refs) == 60
        assert sum(r.source == "predicted" for r in refs) == 10

    def test_one_prediction_per_condition(self, rng):
        held = random_records(rng, 3, prefix="h")
        assert len(build_reference_set(held + held, passthrough, [])) == 3

    def test_scaffold_overlap(self, rng):
        held = random_records(rng, 2, prefix="h")
        decoys = random_records(rng, 2, prefix="d")
        scaffold_of = {"h0": "s1", "h1": "s2", "d0": "s2", "d1": "s3"}
        with pytest.raises(ScaffoldOverlapError):
            build_reference_set(held, passthrough, decoys, scaffold_of)

    def test_same_compound_in_both(self, rng):
        held = random_records(rng, 2, prefix="x")
        with pytest.raises(ScaffoldOverlapError):
            build_reference_set(held, passthrough, held)

    def test_empty_decoys(self, rng):
        refs = build_reference_set(random_records(rng, 4), passthrough, [])
        assert len(refs) == 4


class TestRanking:
    def _refs(self, sims_true, sims_decoys):
        # 2-d vectors at chosen cosines to the query direction (1, 0)
        def vec(c):
            return np.array([c, np.sqrt(max(0.0, 1 - c * c))])

        refs = [LibraryEntry("q", MD, vec(sims_true))]
        refs += [LibraryEntry(f"d{k}", MD, vec(c)) for k, c in enumerate(sims_decoys)]
        return refs

    def test_self_match(self, rng):
        queries = random_records(rng, 12)
        refs = build_reference_set(queries, passthrough, random_records(rng, 60, prefix="d"))
        rep = rank_queries(queries, refs)
        assert rep.mean_normalized_rank == 0.0 and rep.top5_fraction == 1.0

    def test_rank_five_of_fifty(self):
        refs = self._refs(0.5, [0.9, 0.8, 0.7, 0.6] + [0.1] * 45)
        q = rank_queries([Rec("q", np.array([1.0, 0.0]))], refs).queries[0]
        assert q.rank == 5 and q.n_candidates == 50
        assert q.normalized_rank == pytest.approx(0.08)
        assert not q.top5  # ceil(2.5) = 3

    def test_rank_three_of_hundred(self):
        refs = self._refs(0.5, [0.9, 0.8] + [0.1] * 97)
        q = rank_queries([Rec("q", np.array([1.0, 0.0]))], refs).queries[0]
        assert q.rank == 3 and q.top5

    def test_ties_average(self):
        refs = self._refs(0.5, [0.5, 0.5, 0.1])
        q = rank_queries([Rec("q", np.array([1.0, 0.0]))], refs).queries[0]
        assert q.rank == 2.0

    def test_metadata_filter(self):
        other = SpectrumMetadata(50.0, "[M+H]+", "HCD", 200.0)
        refs = self._refs(0.5, [0.9]) + [LibraryEntry("x", other, np.array([1.0, 0.0]))]
        q = rank_queries([Rec("q", np.array([1.0, 0.0]))], refs).queries[0]
        assert q.n_candidates == 2
        q_tol = rank_queries([Rec("q", np.array([1.0, 0.0]))], refs, ce_tolerance=25.0).queries[0]
        assert q_tol.n_candidates == 3

    def test_missing_true_candidate(self):
        refs = self._refs(0.5, [0.9])
        with pytest.raises(MissingCandidateError, match="nobody"):
            rank_queries([Rec("nobody", np.array([1.0, 0.0]))], refs)

    def test_parallel_matches_serial(self, rng):
        queries = random_records(rng, 20)
        refs = build_reference_set(queries, lambda rs: passthrough(rs) + 0.3, random_records(rng, 40, prefix="d"))
        a = rank_queries(queries, refs)
        b = rank_queries(queries, refs, workers=4)
        assert a.queries == b.queries

    @given(st.integers(0, 2**32 - 1), st.integers(1, 30))
    def test_adding_decoys_never_improves_rank(self, seed, extra):
        rng = np.random.default_rng(seed)
        queries = random_records(rng, 5)
        refs = build_reference_set(queries, lambda rs: passthrough(rs) + rng.uniform(size=(len(rs), 40)), random_records(rng, 10, prefix="d"))
        before = rank_queries(queries, refs)
        more = refs + [LibraryEntry(f"e{k}", MD, rng.uniform(size=40)) for k in range(extra)]
        after = rank_queries(queries, more)
        for a, b in zip(before.queries, after.queries):
            assert b.rank >= a.rank
            assert 0.0 <= b.normalized_rank <= 1.0

    def test_csv_files(self, tmp_path, rng):
        queries = random_records(rng, 3)
        rep = rank_queries(queries, build_reference_set(queries, passthrough, []))
        rep.write_csv(tmp_path / "d.csv", tmp_path / "s.csv")
        assert len((tmp_path / "d.csv").read_text().splitlines()) == 4
        assert (tmp_path / "s.csv").read_text().splitlines()[1].startswith("3,0.0,1.0")


class TestCESweep:
    def test_one_energy(self):
        g = prepare(parse_smiles("CCO"))
        table = ce_sweep(OracleModel({id(g): "CCO"}), "c", g, [40.0], make_metadata(parse_smiles("CCO"), 40.0, "[M+H]+"))
        assert len(table.rows) == 1

    @pytest.mark.parametrize("smiles", CORPUS20_SMILES)
    def test_oracle_trend(self, smiles):
        g = prepare(parse_smiles(smiles))
        md = make_metadata(parse_smiles(smiles), 10.0, "[M+H]+")
        table = ce_sweep(OracleModel({id(g): smiles}), "c", g, [10, 50, 100], md)
        mz = [r.weighted_mean_mz for r in table.select("predicted")]
        assert mz == sorted(mz, reverse=True)

    def test_real_rows_paired(self):
        g = prepare(parse_smiles("CCO"))
        real = {10.0: BinnedSpectrum(np.eye(600)[40]), 50.0: BinnedSpectrum(np.eye(600)[20])}
        table = ce_sweep(OracleModel({id(g): "CCO"}), "c", g, [10.0, 50.0], MD, real)
        assert [r.weighted_mean_mz for r in table.select("real")] == [40.5, 20.5]

    @pytest.mark.parametrize("grid", [[], [50, 10]])
    def test_bad_grid(self, grid):
        g = prepare(parse_smiles("CCO"))
        with pytest.raises(ValueError):
            ce_sweep(OracleModel({id(g): "CCO"}), "c", g, grid, MD)

    def test_trend_pooled(self):
        table = CESweepTable()
        for cid, base in (("a", 100.0), ("b", 300.0)):
            for ce, drop in ((10.0, 0.0), (50.0, 5.0), (100.0, 9.0)):
                table.rows.append(CESweepRow(cid, ce, "predicted", base - drop))
        # pooled over two compounds with very different masses
        # hand-ranked: tied energies share ranks 1.5/3.5/5.5, masses rank 3,2,1,6,5,4
        assert ce_trend(table) == pytest.approx(-8 / np.sqrt(280), rel=1e-12)
        assert np.isnan(ce_trend(CESweepTable()))


class TestAttentionRatios:
    def test_uniform_map(self):
        amap = AttentionMap(np.full(5, 0.2), ("C", "C", "O", "N", "C"))
        stats = heteroatom_ratios([amap])
        assert stats.ratios == {"N": 1.0, "O": 1.0}

    def test_arithmetic(self):
        stats = heteroatom_ratios([AttentionMap(np.array([0.1, 0.1, 0.3]), ("C", "C", "O"))])
        assert stats.ratios["O"] == pytest.approx(3.0, rel=1e-15)

    def test_only_molecules_with_both(self):
        maps = [
            AttentionMap(np.array([0.25, 0.75]), ("C", "O")),
            AttentionMap(np.array([0.5, 0.5]), ("N", "O")),
        ]
        stats = heteroatom_ratios(maps)
        assert stats.ratios == {"O": 3.0}
        assert stats.n_molecules == {"O": 1}

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            heteroatom_ratios([AttentionMap(np.array([1.0]), ("C", "O"))])

    def test_invariant_under_relabeling(self, rng):
        cfg = ModelConfig(num_layers=2, hidden_dim=16, attn_dim_per_head=8, num_heads=2, ffn_dim=16, mlp_hidden_dims=[16], output_bins=32)
        model = Predictor(init_params(cfg, 3), cfg)
        for smiles in ("CC(=O)Nc1ccc(O)cc1", "OCC1CCNC1", "CS(=O)(=O)CCN"):
            g = parse_smiles(smiles)
            perm = [int(i) for i in rng.permutation(g.n_atoms)]
            a = heteroatom_attention(model, [prepare(g)])
            b = heteroatom_attention(model, [prepare(permute_graph(g, perm))])
            assert a.ratios.keys() == b.ratios.keys()
            for el in a.ratios:
                assert b.ratios[el] == pytest.approx(a.ratios[el], rel=1e-9)

    def test_csv(self, tmp_path):
        heteroatom_ratios([AttentionMap(np.array([0.5, 0.5]), ("C", "O"))]).write_csv(tmp_path / "a.csv")
        assert (tmp_path / "a.csv").read_text().splitlines() == ["element,mean_attention,ratio_vs_carbon,n_molecules", "C,0.5,,0", "O,0.5,1.0,1"]
