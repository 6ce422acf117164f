"""File formats and the command-line surface."""

import filecmp
import os

import numpy as np
import pytest

from conftest import fold_map
from platecheck.cli import main
from platecheck.errors import InvalidArgumentError
from platecheck.formats import (
    emit_report,
    parse_config,
    parse_report,
    read_map,
    read_pixelset,
    write_map,
    write_pixelset,
)
from platecheck.geometry import (
    PiecewiseAffineMap,
    PixelSet,
    build_grid_domain,
)


def sheet_files(tmp_path, z0=-0.5, z1=0.6):
    """u1/u2 map files for a crossing-sheet detect run."""
    dom1 = build_grid_domain(((0.0, 0.0), (1.0, 1.0)), 8)
    u1 = PiecewiseAffineMap(
        dom1, np.c_[dom1.vertices, np.zeros(len(dom1.vertices))])
    dom2 = build_grid_domain(((2.0, 0.0), (3.0, 1.0)), 8)
    x = dom2.vertices
    s = x[:, 0] - 2.0
    u2 = PiecewiseAffineMap(dom2, np.stack(
        [0.3 + 0.4 * s, 0.3 + 0.4 * x[:, 1], z0 + (z1 - z0) * s], axis=1))
    p1, p2 = tmp_path / "u1.map", tmp_path / "u2.map"
    write_map(p1, u1)
    write_map(p2, u2)
    return str(p1), str(p2)


class TestMapFormat:
    def test_map_round_trip(self, tmp_path, unit_square_8):
        f = fold_map(8)
        path = tmp_path / "fold.map"
        write_map(path, f)
        g = read_map(path)
        assert isinstance(g, PiecewiseAffineMap)
        assert np.array_equal(g.domain.vertices, f.domain.vertices)
        assert np.array_equal(g.domain.simplices, f.domain.simplices)
        assert np.array_equal(g.values, f.values)

    def test_mesh_without_values(self, tmp_path, unit_square_8):
        path = tmp_path / "mesh.map"
        write_map(path, unit_square_8)
        g = read_map(path)
        assert not isinstance(g, PiecewiseAffineMap)
        assert np.array_equal(g.simplices, unit_square_8.simplices)

    def test_emit_parse_idempotent(self, tmp_path):
        f = fold_map(4)
        a, b = tmp_path / "a.map", tmp_path / "b.map"
        write_map(a, f)
        write_map(b, read_map(a))
        assert filecmp.cmp(a, b, shallow=False)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "x.map"
        path.write_text("something else\n")
        with pytest.raises(InvalidArgumentError):
            read_map(path)


class TestPixelFormat:
    @pytest.mark.parametrize("fill", ["empty", "full", "mixed"])
    def test_round_trip(self, tmp_path, fill):
        mask = np.zeros((6, 9), dtype=bool)
        if fill == "full":
            mask[:] = True
        elif fill == "mixed":
            mask[1:4, 2:7] = True
            mask[5, 0] = True
        px = PixelSet([0.25, -1.0], 0.125, mask)
        path = tmp_path / "set.px"
        write_pixelset(path, px)
        q = read_pixelset(path)
        assert np.array_equal(q.mask, mask)
        assert q.cell == px.cell
        assert np.allclose(q.origin, px.origin)

    def test_corrupt_rle_rejected(self, tmp_path):
        mask = np.ones((3, 3), dtype=bool)
        path = tmp_path / "set.px"
        write_pixelset(path, PixelSet([0, 0], 1.0, mask))
        text = path.read_text().replace("rle 0 9", "rle 0 8")
        path.write_text(text)
        with pytest.raises(InvalidArgumentError):
            read_pixelset(path)


class TestConfigAndReport:
    def test_parse_config(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment line\n"
            "scenario = crossing\n"
            "hs = 1/16,1/32   # trailing comment\n"
            "\n"
            "epsilon = 1.0\n")
        cfg = parse_config(path)
        assert cfg == {"scenario": "crossing", "hs": "1/16,1/32",
                       "epsilon": "1.0"}

    def test_bad_config_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("just words\n")
        with pytest.raises(InvalidArgumentError):
            parse_config(path)

    def test_report_round_trip(self, tmp_path):
        report = {
            "run": {"subcommand": "degree", "seed": 3},
            "degree": {"value": 2, "regular": True,
                       "margin": 0.1234567891},
            "rows": [{"h": 0.0625, "volume": 0.25},
                     {"h": 0.03125, "volume": 0.0625}],
        }
        path = tmp_path / "out.report"
        emit_report(report, path)
        back = parse_report(path)
        assert back["run"]["subcommand"] == "degree"
        assert back["degree"]["value"] == 2
        assert back["degree"]["regular"] is True
        assert len(back["rows"]) == 2
        assert back["rows"][1]["h"] == pytest.approx(0.03125)

    def test_csv_mode(self, tmp_path):
        report = {
            "run": {"seed": 0},
            "rows": [{"h": 0.5, "ok": True}, {"h": 0.25, "ok": False}],
        }
        path = tmp_path / "out.csv"
        emit_report(report, path, format="csv")
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# platecheck-report v1")
        assert "# run.seed = 0" in lines
        body = [ln for ln in lines if not ln.startswith("#")]
        assert body[0] == "h,ok"
        assert body[1] == "0.5,true"
        assert body[2] == "0.25,false"


class TestCLI:
    def test_degree_subcommand(self, tmp_path, capsys):
        from conftest import complex_square_map, disk_domain
        f = complex_square_map(disk_domain(rings=8, sectors=24))
        mp = tmp_path / "map.map"
        write_map(mp, f)
        out = tmp_path / "degree.report"
        code = main(["degree", "--map", str(mp), "--point", "0.25,0",
                     "--tolerance", "0.05", "--out", str(out)])
        assert code == 0
        rep = parse_report(out)
        assert rep["degree"]["value"] == 2
        assert rep["tolerances"]["degree_tolerance"] == pytest.approx(0.05)
        assert "degree 2" in capsys.readouterr().out

    def test_degree_boundary_point_exit_2(self, tmp_path):
        from conftest import disk_domain
        dom = disk_domain(rings=8, sectors=24)
        mp = tmp_path / "map.map"
        write_map(mp, PiecewiseAffineMap(dom, dom.vertices.copy()))
        code = main(["degree", "--map", str(mp), "--point", "0.999,0",
                     "--tolerance", "0.05"])
        assert code == 2

    def test_missing_file_exit_2(self, tmp_path):
        code = main(["degree", "--map", str(tmp_path / "no.map"),
                     "--point", "0,0"])
        assert code == 2

    def test_unknown_flag_systemexit(self):
        with pytest.raises(SystemExit) as err:
            main(["degree", "--nonsense"])
        assert err.value.code == 2

    def test_detect_subcommand(self, tmp_path):
        p1, p2 = sheet_files(tmp_path)
        out = tmp_path / "detect.report"
        code = main(["detect", "--u1", p1, "--u2", p2,
                     "--thickness", "1.0", "--out", str(out)])
        assert code == 0
        rep = parse_report(out)
        assert rep["detect"]["verdict"] == "simple-interpenetration"
        degrees = {row["degree"] for row in rep["rows"]}
        assert {0, 1} <= degrees

    def test_truncate_subcommand(self, tmp_path):
        dom = build_grid_domain(((0.0, 0.0), (1.0, 1.0)), 16)
        vals = dom.vertices.copy()
        center = np.argmin(np.linalg.norm(dom.vertices - 0.5, axis=1))
        vals[center, 1] += 10.0 / 16.0
        mp = tmp_path / "spike.map"
        write_map(mp, PiecewiseAffineMap(dom, vals))
        outmap = tmp_path / "trunc.map"
        report = tmp_path / "trunc.report"
        code = main(["truncate", "--map", str(mp), "--K", "3.0",
                     "--out", str(outmap), "--report", str(report)])
        assert code == 0
        g = read_map(outmap)
        svals = np.linalg.svd(g.gradients, compute_uv=False)[:, 0]
        assert svals.max() <= 3.0 + 1e-9
        rep = parse_report(report)
        assert rep["truncation"]["converged"] is True
        assert rep["tolerances"]["K"] == pytest.approx(3.0)

    def test_measure_subcommand(self, tmp_path):
        mask = np.zeros((256, 4), dtype=bool)
        mask[:, 0] = True
        px = tmp_path / "seg.px"
        write_pixelset(px, PixelSet([0.0, 0.0], 1 / 256, mask))
        out = tmp_path / "measure.report"
        code = main(["measure", "--pixelset", str(px), "--kind",
                     "spherical", "--m", "1", "--delta", "0.0625",
                     "--out", str(out)])
        assert code == 0
        rep = parse_report(out)
        assert 1.0 <= rep["measure"]["value"] <= 1.3

    def test_rigidity_subcommand(self, tmp_path):
        # Resolution 4: vertex coordinates are exact in the %.9g file
        # encoding, so the rigid fit survives the round trip bit-for-bit.
        dom = build_grid_domain(((0, 0, 0), (1, 1, 1)), 4)
        mp = tmp_path / "rigid.map"
        write_map(mp, PiecewiseAffineMap(dom, dom.vertices + 2.0))
        out = tmp_path / "rigidity.report"
        code = main(["rigidity", "--map", str(mp), "--balls",
                     "0.5,0.5,0.5,0.6", "--out", str(out)])
        assert code == 0
        rep = parse_report(out)
        assert rep["rigidity"]["max_residual"] <= 1e-10
        assert all(row["exact_rigid"] for row in rep["rows"])

    def test_pathology_deterministic(self, tmp_path):
        d1, d2 = tmp_path / "run1", tmp_path / "run2"
        for d in (d1, d2):
            code = main(["pathology", "ms", "--k", "0",
                         "--out", str(d)])
            assert code == 0
        for name in ("ms_element_k0.map", "ms_limit.map"):
            assert filecmp.cmp(d1 / name, d2 / name, shallow=False)

    def test_pathology_crossing_files(self, tmp_path):
        out = tmp_path / "xing"
        code = main(["pathology", "crossing", "--resolution", "8",
                     "--out", str(out)])
        assert code == 0
        u1 = read_map(out / "crossing_u1.map")
        u2 = read_map(out / "crossing_u2.map")
        assert isinstance(u1, PiecewiseAffineMap)
        assert u2.values.shape[1] == 3

    def test_seed_env_override(self, tmp_path, monkeypatch):
        mask = np.ones((4, 4), dtype=bool)
        px = tmp_path / "sq.px"
        write_pixelset(px, PixelSet([0.0, 0.0], 0.25, mask))
        out = tmp_path / "m.report"
        monkeypatch.setenv("PLATECHECK_SEED", "7")
        code = main(["measure", "--pixelset", str(px), "--kind",
                     "packing", "--m", "2", "--delta", "0.5",
                     "--seed", "0", "--out", str(out)])
        assert code == 0
        rep = parse_report(out)
        assert rep["run"]["seed"] == 7

    def test_pipeline_subcommand(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        out = tmp_path / "pipeline.report"
        cfg.write_text(
            "scenario = crossing\n"
            # Keep h at or above the mesh size: below it the partner-
            # point pullback error dominates the affine-offset guard.
            "hs = 1/4,1/8,1/16\n"
            "epsilon = 1.0\n"
            "resolution = 16\n"
            "samples = 256\n"
            "detect_samples = 512\n")
        code = main(["pipeline", "--config", str(cfg),
                     "--out", str(out)])
        assert code == 0
        rep = parse_report(out)
        assert rep["pipeline"]["passed"] is True
        assert rep["detect"]["verdict"] == "simple-interpenetration"
        assert len(rep["rows"]) == 3
        for row in rep["rows"]:
            assert row["volume"] / row["h"] ** 2 >= rep["pipeline"][
                "pinned_c"]

    def test_pipeline_bad_scenario_exit_2(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("scenario = unknown\n")
        assert main(["pipeline", "--config", str(cfg)]) == 2
