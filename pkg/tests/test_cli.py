"""Tests for the batch front end."""

import pytest

from slipflow import cli


def run(argv):
    return cli.main(argv)


class TestLadders:
    def test_reference_values_in_csv(self, tmp_path):
        code = run(["ladders", "--s", "4", "--n", "2", "--out", str(tmp_path)])
        assert code == 0
        text = (tmp_path / "ladders.csv").read_text()
        assert "slip,0,1.5," in text
        assert "slip,1,2.4," in text
        assert "# slip M = 1" in text

    def test_friction_included_with_q(self, tmp_path):
        run(["ladders", "--s", "4", "--n", "2", "--q", "3", "--out", str(tmp_path)])
        text = (tmp_path / "ladders.csv").read_text()
        assert "friction,1,2.4," in text

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["ladders", "--s", "5", "--n", "2", "--seed", "7", "--out", str(a)])
        run(["ladders", "--s", "5", "--n", "2", "--seed", "7", "--out", str(b)])
        assert (a / "ladders.csv").read_bytes().replace(str(a).encode(), b"") == \
               (b / "ladders.csv").read_bytes().replace(str(b).encode(), b"")


class TestMesh:
    def test_writes_mesh_and_quality(self, tmp_path):
        code = run(["mesh", "--domain", "disc", "--h", "0.25", "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "mesh.txt").exists()
        quality = (tmp_path / "mesh_quality.csv").read_text()
        assert "min_angle_deg,h" in quality

    def test_mesh_file_roundtrip(self, tmp_path):
        from slipflow.mesh import read_mesh
        run(["mesh", "--domain", "square", "--h", "0.5", "--out", str(tmp_path)])
        m, fields = read_mesh(tmp_path / "mesh.txt")
        m.validate()
        assert not fields


class TestPiolaCheck:
    def test_runs_clean(self, tmp_path):
        code = run(["piola-check", "--maps", "2", "--pairs", "1", "--out", str(tmp_path)])
        assert code == 0
        text = (tmp_path / "piola_identities.csv").read_text()
        assert "gradient_pairing" in text
        assert ",0" not in [ln.rsplit(",", 1)[-1] for ln in text.splitlines()
                            if ln and not ln.startswith(("#", "map,"))]

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run(["piola-check", "--maps", "1", "--pairs", "1", "--seed", "3",
                 "--out", str(out)])
        clean_a = (a / "piola_identities.csv").read_bytes().replace(str(a).encode(), b"")
        clean_b = (b / "piola_identities.csv").read_bytes().replace(str(b).encode(), b"")
        assert clean_a == clean_b


class TestSolveAndConverge:
    def test_solve_outputs(self, tmp_path):
        code = run(["solve", "--case", "square-slip", "--h", "0.25", "--out", str(tmp_path)])
        assert code == 0
        diag = (tmp_path / "diagnostics.csv").read_text()
        assert "infsup," in diag and "kernel_dim,0" in diag
        assert (tmp_path / "solution.txt").exists()

    def test_converge_zero_case(self, tmp_path):
        code = run(["converge", "--case", "zero", "--h", "0.5", "--refine", "1",
                    "--out", str(tmp_path)])
        assert code == 0
        assert "level,h,err_u_H1" in (tmp_path / "rates.csv").read_text()

    def test_solve_beta_constant_override(self, tmp_path):
        code = run(["solve", "--case", "square-slip", "--h", "0.25", "--beta", "2.5",
                    "--out", str(tmp_path)])
        assert code == 0

    def test_solve_beta_patch_probe(self, tmp_path):
        code = run(["solve", "--beta", "patch", "--h", "0.2", "--out", str(tmp_path)])
        assert code == 0
        assert "min_pivot_ratio" in (tmp_path / "diagnostics.csv").read_text()

    def test_solve_with_refine_emits_rate_table(self, tmp_path):
        code = run(["solve", "--case", "zero", "--h", "0.5", "--refine", "1",
                    "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "rates.csv").exists()

    def test_piola_named_graph(self, tmp_path):
        code = run(["piola-check", "--graph", "sin", "--delta", "0.25", "--s", "4",
                    "--pairs", "1", "--out", str(tmp_path)])
        assert code == 0


class TestReflect:
    def test_reflect_check(self, tmp_path):
        code = run(["reflect-check", "--h", "0.25", "--out", str(tmp_path)])
        assert code == 0
        text = (tmp_path / "reflect.csv").read_text()
        assert "energy," in text


class TestConfigAndErrors:
    def test_config_overrides_flags(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("s = 5\nout = " + str(tmp_path / "cfgout") + "\n")
        code = run(["--config", str(cfg), "ladders", "--s", "4", "--out", str(tmp_path)])
        assert code == 0
        text = ((tmp_path / "cfgout") / "ladders.csv").read_text()
        assert "# s = 5.0" in text  # config wins over the flag

    def test_bad_config_key_exits_2(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("nonsense = 1\n")
        with pytest.raises(SystemExit) as exc:
            run(["--config", str(cfg), "ladders", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["ladders", "--bogus", "1", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run([])
        assert exc.value.code == 2
