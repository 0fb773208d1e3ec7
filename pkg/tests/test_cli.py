import os

import numpy as np
import pytest

from gsdpg.cli import main


def run_in(tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    return main(argv)


class TestSolveCommand:
    def test_linear_solve_writes_vtk(self, tmp_path, monkeypatch, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("problem = solovev-iter\nk = 1\nresolution = 6,2\n")
        rc = run_in(tmp_path, monkeypatch, ["solve", "-c", str(cfg)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "nonlinear iterations: 1" in out
        assert (tmp_path / "gsdpg_solution.vtk").exists()

    def test_option_overrides(self, tmp_path, monkeypatch):
        rc = run_in(tmp_path, monkeypatch, [
            "solve", "-o", "problem=solovev-iter", "-o", "k=1",
            "-o", "resolution=4,2", "-o", "output_prefix=x"])
        assert rc == 0
        assert (tmp_path / "x_solution.vtk").exists()

    def test_unknown_option_exits_1(self, tmp_path, monkeypatch, capsys):
        rc = run_in(tmp_path, monkeypatch, ["solve", "-o", "omega=2"])
        assert rc == 1
        assert "unknown option" in capsys.readouterr().err

    def test_unknown_problem_exits_1(self, tmp_path, monkeypatch, capsys):
        rc = run_in(tmp_path, monkeypatch, ["solve", "-o", "problem=spheromak"])
        assert rc == 1
        assert "unknown problem" in capsys.readouterr().err

    def test_mesh_file_input(self, tmp_path, monkeypatch):
        msh = tmp_path / "square.msh"
        msh.write_text("""$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0.5 0.0 0
2 1.5 0.0 0
3 1.5 1.0 0
4 0.5 1.0 0
$EndNodes
$Elements
2
1 2 2 0 1 1 2 3
2 2 2 0 1 1 3 4
$EndElements
""")
        rc = run_in(tmp_path, monkeypatch, [
            "solve", "-o", "problem=rect-amr", "-o", "k=1",
            "-o", f"mesh_file={msh}"])
        assert rc == 0

    def test_malformed_mesh_reports_line(self, tmp_path, monkeypatch, capsys):
        msh = tmp_path / "bad.msh"
        msh.write_text("$MeshFormat\n9.9 0 8\n$EndMeshFormat\n")
        rc = run_in(tmp_path, monkeypatch, [
            "solve", "-o", "problem=rect-amr", "-o", f"mesh_file={msh}"])
        assert rc == 1
        assert "line 2" in capsys.readouterr().err


class TestConvergeCommand:
    def test_writes_csv_with_orders(self, tmp_path, monkeypatch):
        rc = run_in(tmp_path, monkeypatch, [
            "converge", "-o", "problem=solovev-iter", "-o", "k=1",
            "-o", "resolution=4,2", "-o", "levels=2"])
        assert rc == 0
        csv = (tmp_path / "gsdpg_convergence.csv").read_text().strip().split("\n")
        assert csv[0] == "level,h,n_elements,err_psi,order_psi,err_q,order_q"
        assert len(csv) == 3
        order = float(csv[2].split(",")[4])
        assert 1.0 < order < 3.0

    def test_problem_without_exact_solution_exits_2(self, tmp_path, monkeypatch, capsys):
        rc = run_in(tmp_path, monkeypatch, [
            "converge", "-o", "problem=rect-amr", "-o", "levels=2"])
        assert rc == 2
        assert "no exact solution" in capsys.readouterr().err


class TestAmrCommand:
    def test_writes_history_and_solution(self, tmp_path, monkeypatch):
        rc = run_in(tmp_path, monkeypatch, [
            "amr", "-o", "problem=rect-amr", "-o", "k=1",
            "-o", "resolution=4,4", "-o", "max_amr_iters=2"])
        assert rc == 0
        hist = (tmp_path / "gsdpg_amr_history.csv").read_text().strip().split("\n")
        assert hist[0] == "iteration,n_elements,energy_residual,n_marked,nonlinear_iters"
        assert len(hist) >= 2
        assert (tmp_path / "gsdpg_solution.vtk").exists()
        n0 = int(hist[1].split(",")[1])
        n1 = int(hist[2].split(",")[1])
        assert n1 > n0
