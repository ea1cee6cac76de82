import json
import math
import re
import time
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from transluce import direct as dr
from transluce.cli import SH_SCHEMA, build_parser, main
from transluce.core import Image
from transluce.scenefile import load_scene
from transluce.synth import read_pfm, write_pfm
from transluce.synth.scene import build_scene
from transluce.volume.tracer import raycast_gbuffer

ROOT = Path(__file__).resolve().parents[1]
SPHERE = ROOT / "docs" / "scenes" / "sphere.json"
FAST = ["--res", "8", "--spp", "4", "--max-bounces", "8", "--quiet"]


def scene_file(tmp_path, name="scene.json", **changes):
    doc = json.loads(SPHERE.read_text())
    for key, value in changes.items():
        doc[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def run(*argv):
    return main([str(a) for a in argv])


def documented_flags():
    text = (ROOT / "docs" / "cli.md").read_text()
    sections = {}
    name = None
    for line in text.splitlines():
        m = re.match(r"## (\w+)", line)
        if m:
            name = m.group(1)
            sections[name] = set()
        elif name and line.startswith("- `--"):
            sections[name].add(re.match(r"- `(--[\w-]+)", line).group(1))
    return sections


def parser_flags(parser):
    out = set()
    for action in parser._actions:
        out.update(s for s in action.option_strings if s.startswith("--") and s != "--help")
    return out


def subparsers():
    p = build_parser()
    action = next(a for a in p._actions if hasattr(a, "choices") and isinstance(a.choices, dict))
    return action.choices


class TestFlags:
    def test_doc_flag_parity(self):
        docs = documented_flags()
        glob = docs.pop("Global")
        subs = subparsers()
        assert set(docs) == set(subs)
        for name, sp in subs.items():
            assert parser_flags(sp) == docs[name] | glob, name

    def test_help_lists_documented_flags(self, capsys):
        docs = documented_flags()
        glob = docs.pop("Global")
        for name, flags in docs.items():
            with pytest.raises(SystemExit) as e:
                main([name, "--help"])
            assert e.value.code == 0
            text = capsys.readouterr().out
            for f in flags | glob:
                assert f in text, (name, f)

    def test_bad_flags_exit_2(self):
        for argv in (["render", str(SPHERE), "--bogus"], ["gradcheck", "--threads", "0"],
                     ["gradcheck", "--res", "0x4"], ["synth"], ["render", str(SPHERE),
                                                               "--mode", "nope"]):
            with pytest.raises(SystemExit) as e:
                main(argv)
            assert e.value.code == 2

    def test_threads_env_default(self, monkeypatch):
        monkeypatch.setenv("TRANSLUCE_THREADS", "3")
        args = build_parser().parse_args(["gradcheck"])
        assert args.threads == 3


class TestRender:
    def test_volume_deterministic_and_thread_stable(self, tmp_path):
        assert run("render", SPHERE, "--out", tmp_path / "a", *FAST) == 0
        assert run("render", SPHERE, "--out", tmp_path / "b", "--threads", "2", *FAST) == 0
        for f in ("flash.pfm", "noflash.pfm"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        run("render", SPHERE, "--out", tmp_path / "c", "--seed", "1", *FAST)
        assert (tmp_path / "a" / "flash.pfm").read_bytes() != \
            (tmp_path / "c" / "flash.pfm").read_bytes()

    def test_flash_only_and_preview(self, tmp_path):
        assert run("render", SPHERE, "--out", tmp_path, "--flash-only", "--preview", *FAST) == 0
        assert sorted(p.name for p in tmp_path.iterdir()) == ["flash.pfm", "flash.png"]

    def test_direct_fast(self, tmp_path):
        argv = ("render", SPHERE, "--mode", "direct", "--res", "256", "--out", tmp_path,
                "--quiet")
        assert run(*argv) == 0
        t0 = time.perf_counter()
        run(*argv)
        assert time.perf_counter() - t0 < 1.0
        assert read_pfm(tmp_path / "flash.pfm").data.shape == (256, 256, 3)

    def test_missing_file(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert run("render", missing, "--out", tmp_path) == 2
        assert str(missing) in capsys.readouterr().err

    def test_schema_error_names_field(self, tmp_path, capsys):
        path = scene_file(tmp_path, sss={"sigma_t": [8, 12, 16], "alpha": [0.9, 0.7, 1.2],
                                         "g": 0.3})
        assert run("render", path, "--out", tmp_path) == 2
        # the exact text quoted in the scene format document
        want = "scene.json: sss.alpha[2]: 1.2 is greater than or equal to the maximum of 1"
        assert want in capsys.readouterr().err

    def test_wrong_schema_version(self, tmp_path):
        doc = json.loads(SPHERE.read_text())
        doc["$schema"] = "transluce-scene/9"
        (tmp_path / "v.json").write_text(json.dumps(doc))
        assert run("render", tmp_path / "v.json", "--out", tmp_path) == 2


class TestSynth:
    ARGS = ("--n", "2", "--seed", "7", "--spp", "2", "--max-bounces", "4", "--res", "8",
            "--sh-samples", "1024", "--quiet")

    def test_deterministic(self, tmp_path):
        assert run("synth", "--out", tmp_path / "a", *self.ARGS) == 0
        assert run("synth", "--out", tmp_path / "b", "--validate", *self.ARGS) == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                       if p.is_file())
        assert len(files) == 2 * 10 + 1
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        corpus = json.loads((tmp_path / "a" / "corpus.json").read_text())
        assert len(corpus["scenes"]) == 2

    def test_partial_failure(self, tmp_path):
        (tmp_path / "m").mkdir()
        (tmp_path / "m" / "broken.obj").write_text("v 0 0 0\nf 1 2 3\n")
        assert run("synth", "--n", "1", "--no-procedural", "--meshes", tmp_path / "m",
                   "--out", tmp_path / "c", "--res", "4", "--spp", "1", "--quiet") == 4
        assert (tmp_path / "c" / "corpus.json").exists()

    def test_missing_asset_dir(self, tmp_path):
        assert run("synth", "--n", "1", "--meshes", tmp_path / "none", "--out", tmp_path) == 2

    def test_nothing_to_draw(self, tmp_path):
        assert run("synth", "--n", "1", "--no-procedural", "--out", tmp_path) == 2


@pytest.fixture(scope="module")
def observed(tmp_path_factory):
    d = tmp_path_factory.mktemp("obs")
    assert run("render", SPHERE, "--out", d, *FAST) == 0
    return d


class TestInvert:
    def test_zero_steps_echo_init(self, observed, tmp_path):
        code = run("invert", "--scene", SPHERE, "--flash", observed / "flash.pfm",
                   "--noflash", observed / "noflash.pfm", "--mode", "sss", "--steps", "0",
                   "--coarse-res", "4", "--spp", "4", "--out", tmp_path, "--quiet")
        assert code == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["params"]["values"] == [0.0] * 8
        assert rep["best_step"] == 0 and len(rep["losses"]) == 1
        assert rep["physical"]["sss"]["g"] == pytest.approx(0.45)
        for f in ("losses.csv", "recovered.pfm", "side_by_side.pfm", "side_by_side.png"):
            assert (tmp_path / f).exists()
        assert read_pfm(tmp_path / "side_by_side.pfm").data.shape == (8, 16, 3)

    def test_direct_mode(self, observed, tmp_path):
        code = run("invert", "--scene", SPHERE, "--flash", observed / "flash.pfm",
                   "--mode", "direct", "--steps", "5", "--out", tmp_path, "--quiet")
        assert code == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert len(rep["losses"]) == 6

    def test_size_mismatch(self, observed, tmp_path):
        write_pfm(tmp_path / "small.pfm", Image(np.zeros((4, 4, 3))))
        assert run("invert", "--scene", SPHERE, "--flash", observed / "flash.pfm",
                   "--noflash", tmp_path / "small.pfm", "--mode", "sss",
                   "--out", tmp_path) == 2

    def test_input_errors(self, observed, tmp_path):
        base = ("invert", "--scene", SPHERE, "--flash", observed / "flash.pfm", "--out", tmp_path)
        assert run(*base, "--mode", "sss") == 2
        assert run(*base, "--mode", "sss", "--one-shot", "--coarse-res", "3") == 2
        assert run(*base, "--lr", "-1") == 2
        assert run("invert", "--scene", SPHERE, "--flash", tmp_path / "none.pfm",
                   "--out", tmp_path) == 2

    def test_fd_step_too_small(self, observed, tmp_path):
        assert run("invert", "--scene", SPHERE, "--flash", observed / "flash.pfm",
                   "--mode", "sss", "--one-shot", "--coarse-res", "4", "--spp", "2",
                   "--fd-step", "1e-5", "--out", tmp_path, "--quiet") == 3


class TestGradcheck:
    def test_small_run(self, capsys):
        t0 = time.perf_counter()
        assert run("gradcheck", "--res", "8", "--scenes", "1") == 0
        assert time.perf_counter() - t0 < 5.0
        lines = capsys.readouterr().out.splitlines()
        rows = [ln.split()[0] for ln in lines[1:-1]]
        assert rows == list(dr.GROUPS)
        assert all(ln.endswith("PASS") for ln in lines[1:-1])

    def test_failure_exit_code(self):
        assert run("gradcheck", "--res", "8", "--scenes", "1", "--tol", "0") == 1

    def test_square_only(self):
        assert run("gradcheck", "--res", "8x6", "--scenes", "1") == 2


class TestEdit:
    def test_lerp_t0_bit_exact(self, tmp_path):
        other = scene_file(tmp_path, "b.json", sss={"sigma_t": [1, 2, 3],
                                                    "alpha": [0.4, 0.4, 0.4], "g": 0.8})
        assert run("edit", "--in", SPHERE, "--lerp", other, "--t", "0", "--out", tmp_path,
                   *FAST) == 0
        assert (tmp_path / "before.pfm").read_bytes() == (tmp_path / "after.pfm").read_bytes()
        assert load_scene(tmp_path / "edited.json").sss == load_scene(SPHERE).sss

    def test_g_only_leaves_mask(self, tmp_path):
        assert run("edit", "--in", SPHERE, "--set", "sss.g=0.7", "--out", tmp_path, *FAST) == 0
        b = load_scene(tmp_path / "edited.json")
        a = replace(load_scene(SPHERE), resolution=b.resolution)
        assert b.sss.g == 0.7 and b.sss.alpha == a.sss.alpha
        masks = []
        for spec in (a, b):
            sc = build_scene(spec, SPHERE.parent)
            masks.append(raycast_gbuffer(sc.geometry, sc.roughness, spec.camera).mask.data)
        assert np.array_equal(masks[0], masks[1])

    def test_set_forms(self, tmp_path):
        assert run("edit", "--in", SPHERE, "--set", "sss.alpha=0.9,0.5,0.5,sss.g=0.3",
                   "--set", "sss.sigma_t=4", "--out", tmp_path, *FAST) == 0
        sss = load_scene(tmp_path / "edited.json").sss
        assert tuple(sss.alpha) == (0.9, 0.5, 0.5) and tuple(sss.sigma_t) == (4, 4, 4)

    def test_out_of_range(self, tmp_path):
        for bad in ("sss.alpha=1.0", "sss.g=1", "sss.sigma_t=-1", "sss.bogus=1"):
            assert run("edit", "--in", SPHERE, "--set", bad, "--out", tmp_path, *FAST) == 2
        assert run("edit", "--in", SPHERE, "--lerp", SPHERE, "--t", "1.5",
                   "--out", tmp_path, *FAST) == 2
        assert run("edit", "--in", SPHERE, "--out", tmp_path, *FAST) == 2

    def test_extinction_sweep_transmits_more_background(self, tmp_path):
        # a dark absorber in front of a bright sky, no flash
        coeffs = [0.0] * 27
        for c in range(3):
            coeffs[9 * c] = 2 * math.sqrt(math.pi)
        path = scene_file(tmp_path, env={"kind": "sh", "coeffs": coeffs, "height": 16,
                                         "yaw": 0.0},
                          sss={"sigma_t": [8, 8, 8], "alpha": [0, 0, 0], "g": 0.0},
                          flash_radiance=0.0)
        probe = []
        for st in (32, 16, 8, 4, 2, 1):
            out = tmp_path / f"e{st}"
            assert run("edit", "--in", path, "--set", f"sss.sigma_t={st}", "--out", out,
                       "--res", "9", "--spp", "64", "--quiet") == 0
            probe.append(read_pfm(out / "after.pfm").data[4, 4].mean())
        assert all(b > a for a, b in zip(probe, probe[1:]))


class TestShproject:
    def test_constant_env(self, tmp_path):
        write_pfm(tmp_path / "env.pfm", Image(np.ones((32, 64, 3))))
        assert run("shproject", "--env", tmp_path / "env.pfm", "--samples", "200000",
                   "--out", tmp_path, "--quiet") == 0
        doc = json.loads((tmp_path / "sh.json").read_text())
        jsonschema.validate(doc, SH_SCHEMA)
        c = np.array(doc["coefficients"])
        assert np.allclose(c[:, 0], 2 * math.sqrt(math.pi), atol=1e-2)
        assert np.max(np.abs(c[:, 1:])) < 0.01

    def test_full_turn(self, tmp_path):
        rng = np.random.default_rng(0)
        write_pfm(tmp_path / "env.pfm", Image(rng.random((16, 32, 3))))
        for name, yaw in (("a", 0.0), ("b", 2 * math.pi)):
            assert run("shproject", "--env", tmp_path / "env.pfm", "--yaw", yaw,
                       "--samples", "50000", "--out", tmp_path / name, "--quiet") == 0
        a = np.array(json.loads((tmp_path / "a" / "sh.json").read_text())["coefficients"])
        b = np.array(json.loads((tmp_path / "b" / "sh.json").read_text())["coefficients"])
        assert np.allclose(a, b, atol=1e-9)

    def test_bad_env(self, tmp_path):
        write_pfm(tmp_path / "sq.pfm", Image(np.ones((8, 8, 3))))
        assert run("shproject", "--env", tmp_path / "sq.pfm", "--out", tmp_path) == 2
        (tmp_path / "junk.pfm").write_bytes(b"not a pfm")
        assert run("shproject", "--env", tmp_path / "junk.pfm", "--out", tmp_path) == 2
