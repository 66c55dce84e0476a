import numpy as np
import pytest

from cmbo.cli import main
from cmbo.config import ConfigError, FlowConfig, manifest_hash, parse_config, resolve_lines
from cmbo.grid import load_field
from cmbo.presets import initial_datum, preset_datum
from cmbo.flow import curvature_h0
from cmbo.grid import interior_mask


def test_parse_minimal_and_defaults(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# minimal run\ngroup = euclidean1\npreset = sine1d\n")
    cfg = parse_config(path)
    assert cfg.group == "euclidean1"
    assert cfg.cfl_safety == 0.5
    assert cfg.level_count == 33
    assert cfg.root_tol == 1e-8
    lines = resolve_lines(cfg)
    assert "cfl_safety = 0.5" in lines
    assert "margin_factor = 4.0" in lines
    assert any(line.startswith("resolved.boundary") for line in lines)


def test_parse_rejections(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("foo = 1\n")
    with pytest.raises(ConfigError, match="foo"):
        parse_config(bad)
    with pytest.raises(ConfigError, match="grid.counts"):
        parse_config(None, ["grid.counts=8"])
    with pytest.raises(ConfigError, match="margin"):
        parse_config(None, ["margin_factor=1.0"])
    with pytest.raises(ConfigError, match="preset"):
        parse_config(None, ["preset=vortex"])
    with pytest.raises(ConfigError, match="torus"):
        parse_config(None, ["group=heisenberg1", "boundary=torus"]).resolved_boundary()
    with pytest.raises(ConfigError, match="key = value"):
        parse_config(_write(tmp_path, "oops.cfg", "just words\n"))


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_overrides_win(tmp_path):
    path = _write(tmp_path, "run.cfg", "group = euclidean1\nt = 0.05\n")
    cfg = parse_config(path, ["t=0.01", "seed=3"])
    assert cfg.t == 0.01 and cfg.seed == 3


def test_preset_values():
    cfg = parse_config(None, ["group=euclidean1", "preset=constant", "preset.c=0.5"])
    f = preset_datum("constant", cfg)
    assert np.all(f.values == 0.5)
    cfg = parse_config(None, ["group=euclidean1", "preset=sine1d"])
    f = preset_datum("sine1d", cfg)
    assert f.boundary == "torus"
    assert f.values.max() == pytest.approx(0.3, abs=1e-3)
    cfg = parse_config(
        None, ["group=heisenberg1", "preset=heis_z", "grid.counts=24,24,24"]
    )
    f = preset_datum("heis_z", cfg)
    # the coordinate graph is flat in the horizontal-curvature sense
    h0 = curvature_h0(f).h0
    Z = f.box.meshgrid()[2]
    w = interior_mask(f, margin=0.4) & (np.abs(Z) < 0.5)
    assert np.max(np.abs(h0[w])) < 1e-12
    with pytest.raises(ValueError):
        preset_datum("heis_z", parse_config(None, ["group=euclidean1"]))


def test_input_dump_roundtrip(tmp_path):
    from cmbo.grid import save_field

    cfg = parse_config(None, ["group=euclidean1", "preset=bump"])
    f = preset_datum("bump", cfg)
    path = tmp_path / "in.cmbo"
    save_field(path, f)
    cfg2 = parse_config(None, ["group=euclidean1", f"input={path}"])
    g = initial_datum(cfg2)
    assert np.array_equal(g.values, f.values)
    cfg3 = parse_config(None, ["group=heisenberg1", f"input={path}", "grid.counts=16,16,16"])
    with pytest.raises(ValueError, match="does not match"):
        initial_datum(cfg3)


def test_manifest_hash_stability():
    a = parse_config(None, ["group=euclidean1", "seed=1"])
    b = parse_config(None, ["group=euclidean1", "seed=1"])
    c = parse_config(None, ["group=euclidean1", "seed=2"])
    assert manifest_hash(a) == manifest_hash(b)
    assert manifest_hash(a) != manifest_hash(c)


def test_cli_kernel_check_and_artifacts(tmp_path):
    out = tmp_path / "k"
    code = main(
        [
            "kernel-check",
            "--set", "group=euclidean1",
            "--set", "box.extents=8",
            "--set", "grid.counts=256",
            "--set", "t=0.05",
            "--set", f"outdir={out}",
        ]
    )
    assert code == 0
    assert (out / "manifest.txt").exists()
    csv = (out / "kernel_normalization.csv").read_text().splitlines()
    assert csv[0] == "section,key,value,op,threshold,passed,manifest"
    tag = [l for l in (out / "manifest.txt").read_text().splitlines() if l.startswith("manifest")][0]
    assert csv[1].endswith(tag.split(" = ")[1])


def test_cli_determinism(tmp_path):
    args = [
        "semigroup",
        "--set", "group=euclidean1",
        "--set", "preset=sine1d",
        "--set", "grid.counts=128",
        "--set", "t=0.02",
        "--set", "j.list=2,4",
    ]
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(args + ["--set", f"outdir={out}"]) == 0
        outs.append((out / "resolvent_vs_flow.csv").read_bytes())
    assert outs[0] == outs[1]


def test_cli_flow_run_dumps(tmp_path):
    out = tmp_path / "f"
    code = main(
        [
            "flow",
            "--set", "group=euclidean1",
            "--set", "preset=sine1d",
            "--set", "grid.counts=128",
            "--set", "t=0.02",
            "--set", f"outdir={out}",
        ]
    )
    assert code == 0
    final = load_field(out / "final.cmbo")
    initial = load_field(out / "initial.cmbo")
    assert final.values.max() < initial.values.max()


def test_cli_bad_config_exit_code(tmp_path):
    assert main(["compare", "--set", "grid.counts=4"]) == 2
