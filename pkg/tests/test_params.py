import pytest

from cellfdi.params import ParamFileError, default_config, default_params_text, parse_params


def test_published_constants_in_default_file(config):
    t = config.thermal
    assert (t.conductivity_k, t.heat_capacity_Cp) == (5.99, 1019.99)
    assert (t.gamma_x0, t.gamma_y0, t.gamma_M, t.gamma_N) == (7.9746, 7.9746, -7.9746, -2.3339)
    g = config.geometry
    assert (g.length_M, g.breadth_N) == (0.060, 0.162)


def test_default_grid_is_24_nodes(config):
    assert config.build().n_states == 24


def test_roundtrip_through_dict(config):
    text = "\n".join(f"{k} = {v!r}" for k, v in config.as_dict().items())
    assert parse_params(text) == config


def test_comments_and_blank_lines_ignored():
    text = default_params_text() + "\n\n# trailing comment\n"
    assert parse_params(text) == default_config()


@pytest.mark.parametrize("edit,needle", [
    ("k = -1", "k: must be positive"),
    ("h_o = -2", "h_o"),
    ("bogus = 1", "unknown key"),
    ("k 5", "expected 'key = value'"),
    ("k = abc", "not a number"),
    ("nx = 2.5", "integer"),
])
def test_bad_lines_report_location(edit, needle):
    key = edit.split("=")[0].split()[0]
    lines = [ln for ln in default_params_text().splitlines() if not ln.startswith(f"{key} ")]
    lines.append(edit)
    with pytest.raises(ParamFileError) as exc:
        parse_params("\n".join(lines), source="cell.txt")
    assert needle in str(exc.value)
    if needle != "h_o":
        assert exc.value.line == len(lines)


def test_duplicate_key():
    with pytest.raises(ParamFileError, match="duplicate"):
        parse_params(default_params_text() + "\nk = 3\n")


def test_missing_required():
    text = "\n".join(ln for ln in default_params_text().splitlines() if not ln.startswith("rho"))
    with pytest.raises(ParamFileError, match="missing required keys: rho"):
        parse_params(text)


def test_geometry_errors_wrapped():
    with pytest.raises(ParamFileError, match="depth_p"):
        parse_params(default_params_text().replace("p = 0.006", "p = 0.5"))
