"""
Configuration loader and validator for apdsync.

Documents are YAML. Frequencies are written as ordinary frequencies in GHz
(value = Omega/2pi, the figure-caption convention) under the mandatory marker
`units: GHz_over_2pi`; they are converted to rad/s by one multiplication with
2*pi*1e9. Temperatures are kelvin, times are seconds, drive values and sweep
axes are dimensionless.
"""

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from .analyzer import LYAPUNOV_MODES, OBSERVABLES, AnalysisSettings, EmbeddingConfig
from .controller import ControllerParams
from .errors import ConfigError
from .integrator import IntegratorSettings, ToleranceSettings
from .moments import OscillatorParams

UNITS_MARKER = "GHz_over_2pi"
GHZ_TO_RAD_S = 2.0 * math.pi * 1e9

CONTROLLER_FIELDS = ("Delta_c", "gamma_c", "g_c", "Gamma_c", "Omega_c", "eps_c",
                     "Delta_1", "Delta_2", "gamma_1", "gamma_2", "eps_1", "eps_2")
OSCILLATOR_FREQUENCY_FIELDS = ("Omega", "Gamma", "g")
OSCILLATOR_FIELDS = OSCILLATOR_FREQUENCY_FIELDS + ("T",)
DRIVE_KINDS = ("controller", "constant", "sinusoid")
COUPLINGS = ("bare", "enhanced")
DRIVE_FIELDS = {"controller": (), "constant": ("value",),
                "sinusoid": ("offset", "amplitude", "frequency")}
INTEGRATOR_FIELDS = ("method", "dt", "rtol", "atol", "dt_init", "dt_min", "dt_max")
EMBEDDING_FIELDS = ("tau", "dim", "resample_dt")
ANALYSIS_FIELDS = ("t0", "sync_threshold", "steady_window", "peak_dt", "peak_rel_tol", "flat_tol",
                   "k_max", "regime_observable", "lyapunov", "theiler_window", "lyapunov_fit",
                   "lyapunov_max_refs", "absolute_error")
AXES = ("Delta_c_over_Omega_c", "Delta_Gamma", "Delta_G")
MISMATCH_AXES = ("Delta_Gamma", "Delta_G")

TOP_LEVEL = ("units", "label", "controller", "oscillators", "initial", "drive", "run", "analysis", "sweep")

DEFAULT_TAU = 0.3e-9


class Config:
    """YAML configuration with dotted-key lookup."""

    def __init__(self, config_path: Optional[str] = None, data: Optional[dict] = None):
        self.config_path = Path(config_path) if config_path is not None else None
        self.config = data if data is not None else self._load_config()

    @classmethod
    def from_text(cls, text: str) -> "Config":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"document is not valid YAML: {e}")
        return cls(data=data if data is not None else {})

    def _load_config(self) -> dict:
        """Load configuration from YAML file."""
        if self.config_path is None:
            raise ConfigError("no configuration path given")
        if not self.config_path.exists():
            raise FileNotFoundError(f"Config file not found: {self.config_path}")
        with open(self.config_path, "r") as f:
            try:
                data = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigError(f"{self.config_path}: not valid YAML: {e}")
        return data if data is not None else {}

    def get(self, key: str, default=None):
        """Value at a dotted path such as "run.integrator.rtol", or `default`."""
        node = self.config
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node


@dataclass(frozen=True)
class RunSettings:
    t_end: float
    output_dt: float
    integrator: IntegratorSettings
    embedding: EmbeddingConfig


@dataclass(frozen=True)
class ScenarioConfig:
    """
    One fully resolved simulation (rad/s, seconds). `document` is the
    normalized source document; re-parsing it rebuilds an equal config.
    """

    label: str
    controller: Optional[ControllerParams]
    osc1: OscillatorParams
    osc2: OscillatorParams
    sigma1_x0: float
    sigma2_x0: float
    drive: Dict[str, Any]
    run: RunSettings
    analysis: AnalysisSettings
    document: Dict[str, Any] = field(compare=False, repr=False)

    @property
    def reference_period(self) -> float:
        omega = self.controller.Omega_c if self.controller is not None else self.osc1.Omega
        return 2.0 * math.pi / omega

    def config_hash(self) -> str:
        return document_hash(self.document)

    def resolved(self) -> Dict[str, Any]:
        """Resolved parameters in SI units (rad/s, s, K) for manifests."""
        out = {
            "label": self.label,
            "controller": asdict(self.controller) if self.controller is not None else None,
            "osc1": asdict(self.osc1),
            "osc2": asdict(self.osc2),
            "sigma1_x0": self.sigma1_x0,
            "sigma2_x0": self.sigma2_x0,
            "drive": dict(self.drive),
            "run": asdict(self.run),
            "analysis": asdict(self.analysis),
        }
        return out


@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioConfig
    axes: Tuple[Tuple[str, Tuple[float, ...]], ...]
    document: Dict[str, Any] = field(compare=False, repr=False)

    @property
    def axis_names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.axes)

    @property
    def kind(self) -> str:
        return "detuning" if self.axis_names == ("Delta_c_over_Omega_c",) else "mismatch"

    def config_hash(self) -> str:
        return document_hash(self.document)


def document_hash(document: Dict[str, Any]) -> str:
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def ghz_to_rad_s(value: float) -> float:
    return GHZ_TO_RAD_S * value


def _period_s(nu_ghz: float) -> float:
    """Period in seconds of an ordinary frequency given in GHz."""
    return 1.0 / (nu_ghz * 1e9)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


class _Validator:
    def __init__(self):
        self.problems: List[str] = []

    def section(self, doc: dict, name: str, allowed, required: bool = True,
                where: str = "", listed=None) -> Optional[dict]:
        path = f"{where}{name}"
        if name not in doc or doc[name] is None:
            if required:
                for key in (allowed if listed is None else listed):
                    self.problems.append(f"missing field '{path}.{key}'")
            return None
        sec = doc[name]
        if not isinstance(sec, dict):
            self.problems.append(f"'{path}' must be a mapping")
            return None
        self.unknown(sec, allowed, path)
        return sec

    def unknown(self, sec: dict, allowed, where: str):
        for key in sec:
            if key not in allowed:
                self.problems.append(f"unknown key '{where}.{key}'")

    def number(self, sec: Optional[dict], key: str, where: str) -> Optional[float]:
        if sec is None:
            return None
        if key not in sec or sec[key] is None:
            self.problems.append(f"missing field '{where}.{key}'")
            return None
        v = sec[key]
        if not _is_number(v):
            self.problems.append(f"'{where}.{key}' must be a finite number (got {v!r})")
            return None
        return float(v)


def _defaults(doc: dict, ref_period: float) -> dict:
    """Fill integrator, embedding, output and analysis defaults in place."""
    run = doc.setdefault("run", {})
    integ = run.setdefault("integrator", {})
    integ.setdefault("method", "adaptive")
    integ.setdefault("dt", 1e-3 * ref_period)
    integ.setdefault("rtol", 1e-9)
    integ.setdefault("atol", 1e-9)
    integ.setdefault("dt_init", 1e-3 * ref_period)
    integ.setdefault("dt_min", 1e-12 * ref_period)
    integ.setdefault("dt_max", 0.1 * ref_period)

    emb = run.setdefault("embedding", {})
    emb.setdefault("tau", DEFAULT_TAU)
    emb.setdefault("dim", 3)
    emb.setdefault("resample_dt", emb["tau"] / 10.0)
    run.setdefault("output_dt", emb["resample_dt"])

    ana = doc.setdefault("analysis", {})
    ana.setdefault("t0", "auto")
    ana.setdefault("sync_threshold", 1e-3)
    ana.setdefault("steady_window", 200.0 * ref_period)
    ana.setdefault("peak_dt", ref_period / 200.0)
    ana.setdefault("peak_rel_tol", 1e-3)
    ana.setdefault("flat_tol", 1e-8)
    ana.setdefault("k_max", 8)
    drive_kind = Config(data=doc).get("drive.kind", "controller")
    ana.setdefault("regime_observable", "s1" if drive_kind == "controller" else "sigma1_x")
    ana.setdefault("lyapunov", "auto")
    ana.setdefault("theiler_window", 2.0 * ref_period)
    ana.setdefault("lyapunov_fit", 5.0 * ref_period)
    ana.setdefault("lyapunov_max_refs", 2000)
    ana.setdefault("absolute_error", False)
    return doc


def _scenario_from_document(doc: dict, v: _Validator) -> Optional[ScenarioConfig]:
    drive_doc = doc.get("drive") or {"kind": "controller"}
    if not isinstance(drive_doc, dict):
        v.problems.append("'drive' must be a mapping")
        drive_doc = {"kind": "controller"}
    kind = drive_doc.get("kind", "controller")
    if kind not in DRIVE_KINDS:
        v.problems.append(f"drive.kind must be one of {DRIVE_KINDS} (got {kind!r})")
        kind = "controller"
    v.unknown(drive_doc, ("kind", "phase", "coupling") + DRIVE_FIELDS[kind], "drive")
    coupling = drive_doc.get("coupling", "bare")
    if coupling not in COUPLINGS:
        v.problems.append(f"drive.coupling must be one of {COUPLINGS} (got {coupling!r})")

    ctrl_sec = v.section(doc, "controller", CONTROLLER_FIELDS, required=(kind == "controller"))
    ctrl_vals = {k: v.number(ctrl_sec, k, "controller") for k in CONTROLLER_FIELDS} if ctrl_sec is not None else None

    osc_sec = v.section(doc, "oscillators", ("osc1", "osc2"),
                        listed=[f"{o}.{k}" for o in ("osc1", "osc2") for k in OSCILLATOR_FIELDS])
    osc_vals = {}
    for name in ("osc1", "osc2"):
        sub = v.section(osc_sec, name, OSCILLATOR_FIELDS, where="oscillators.") if osc_sec is not None else None
        osc_vals[name] = {k: v.number(sub, k, f"oscillators.{name}") for k in OSCILLATOR_FIELDS} if sub is not None else None

    init_sec = v.section(doc, "initial", ("sigma1_x", "sigma2_x"))
    sigma1 = v.number(init_sec, "sigma1_x", "initial")
    sigma2 = v.number(init_sec, "sigma2_x", "initial")

    drive_vals = {k: v.number(drive_doc, k, "drive") for k in DRIVE_FIELDS[kind]}
    if "phase" in drive_doc:
        drive_vals["phase"] = v.number(drive_doc, "phase", "drive")

    run_sec = v.section(doc, "run", ("t_end", "output_dt", "integrator", "embedding"), listed=("t_end",))
    t_end = v.number(run_sec, "t_end", "run")

    if v.problems:
        return None
    if ctrl_vals is not None and (ctrl_vals["Omega_c"] is None or ctrl_vals["Omega_c"] <= 0):
        v.problems.append("controller.Omega_c must be > 0")
        return None
    if osc_vals["osc1"]["Omega"] <= 0:
        v.problems.append("oscillators.osc1.Omega must be > 0")
        return None

    ref_omega = ctrl_vals["Omega_c"] if ctrl_vals is not None else osc_vals["osc1"]["Omega"]
    ref_period = _period_s(ref_omega)
    _defaults(doc, ref_period)
    run_sec = doc["run"]
    v.unknown(run_sec["integrator"], INTEGRATOR_FIELDS, "run.integrator")
    v.unknown(run_sec["embedding"], EMBEDDING_FIELDS, "run.embedding")
    v.unknown(doc["analysis"], ANALYSIS_FIELDS, "analysis")
    if v.problems:
        return None

    try:
        controller = None
        if ctrl_vals is not None:
            controller = ControllerParams(**{k: ghz_to_rad_s(val) for k, val in ctrl_vals.items()})
        oscs = {}
        for name, vals in osc_vals.items():
            conv = {k: (ghz_to_rad_s(val) if k in OSCILLATOR_FREQUENCY_FIELDS else val) for k, val in vals.items()}
            try:
                oscs[name] = OscillatorParams(**conv)
            except ConfigError as e:
                raise ConfigError([f"oscillators.{name}: {p}" for p in e.problems])

        drive = {"kind": kind, "coupling": coupling}
        for k, val in drive_vals.items():
            drive[k] = ghz_to_rad_s(val) if k == "frequency" else val

        integ = run_sec["integrator"]
        integrator = IntegratorSettings(
            method=integ["method"],
            dt=float(integ["dt"]),
            tol=ToleranceSettings(float(integ["rtol"]), float(integ["atol"]), float(integ["dt_init"]),
                                  float(integ["dt_min"]), float(integ["dt_max"])),
        )
        emb = run_sec["embedding"]
        embedding = EmbeddingConfig(float(emb["tau"]), emb["dim"], float(emb["resample_dt"]))
        if not _is_number(run_sec["output_dt"]) or run_sec["output_dt"] <= 0:
            raise ConfigError(f"run.output_dt must be > 0 (got {run_sec['output_dt']!r})")
        if not t_end > 0:
            raise ConfigError(f"run.t_end must be > 0 (got {t_end})")
        run = RunSettings(float(t_end), float(run_sec["output_dt"]), integrator, embedding)

        ana = dict(doc["analysis"])
        if ana["t0"] == "auto":
            ana["t0"] = max(10.0 / min(oscs["osc1"].Gamma, oscs["osc2"].Gamma), 50.0 * ref_period)
        elif not _is_number(ana["t0"]):
            raise ConfigError(f"analysis.t0 must be a number or 'auto' (got {ana['t0']!r})")
        if ana["regime_observable"] not in OBSERVABLES or ana["lyapunov"] not in LYAPUNOV_MODES:
            raise ConfigError(f"analysis.regime_observable must be one of {OBSERVABLES} "
                              f"and analysis.lyapunov one of {LYAPUNOV_MODES}")
        if controller is None and ana["regime_observable"] in ("abs_alpha_c_sq", "re_beta_c"):
            raise ConfigError(f"analysis.regime_observable={ana['regime_observable']} needs the controller drive")
        analysis = AnalysisSettings(**ana)
        if not analysis.t0 < run.t_end:
            raise ConfigError(f"analysis.t0={analysis.t0} must precede run.t_end={run.t_end}")

        return ScenarioConfig(
            label=str(doc.get("label", "scenario")),
            controller=controller,
            osc1=oscs["osc1"],
            osc2=oscs["osc2"],
            sigma1_x0=sigma1,
            sigma2_x0=sigma2,
            drive=drive,
            run=run,
            analysis=analysis,
            document=doc,
        )
    except (ConfigError, TypeError) as e:
        v.problems.extend(e.problems if isinstance(e, ConfigError) else [str(e)])
        return None


def _axes_from_document(doc: dict, v: _Validator) -> Tuple[Tuple[str, Tuple[float, ...]], ...]:
    sweep = v.section(doc, "sweep", ("axes",))
    axes_doc = v.section(sweep, "axes", AXES, where="sweep.", listed=()) if sweep is not None else None
    if axes_doc is None:
        return ()
    axes = []
    for name in AXES:
        if name not in axes_doc:
            continue
        values = axes_doc[name]
        if not isinstance(values, list) or not all(_is_number(x) for x in values):
            v.problems.append(f"sweep.axes.{name} must be a list of finite numbers")
            continue
        values = [float(x) for x in values]
        if name in MISMATCH_AXES:
            bad = [x for x in values if not x < 1.0]
            if bad:
                target = "Gamma_2" if name == "Delta_Gamma" else "g_2"
                v.problems.append(f"sweep.axes.{name} values {bad} must be < 1 (else {target} <= 0)")
        axes_doc[name] = values
        axes.append((name, tuple(values)))

    names = tuple(n for n, _ in axes)
    if not names:
        v.problems.append("sweep.axes must name at least one axis")
    elif "Delta_c_over_Omega_c" in names and len(names) > 1:
        v.problems.append("Delta_c_over_Omega_c sweeps are one-axis; do not combine with mismatch axes")
    if "Delta_c_over_Omega_c" in names and "controller" not in doc:
        v.problems.append("a Delta_c_over_Omega_c sweep needs the controller drive")
    if names and names != ("Delta_c_over_Omega_c",):
        # mismatch grids are always Delta_Gamma x Delta_G; a missing axis is the single value 0
        full = dict(axes)
        for name in MISMATCH_AXES:
            if name not in full:
                full[name] = (0.0,)
                axes_doc[name] = [0.0]
        axes = [(name, full[name]) for name in MISMATCH_AXES]
    return tuple(axes)


def parse_config(text: Union[str, dict]) -> Union[ScenarioConfig, SweepSpec]:
    """
    Validate and unit-convert a configuration document.

    Args:
        text: YAML text or an already-loaded mapping

    Returns:
        ScenarioConfig, or SweepSpec when the document has a `sweep` section

    Raises:
        ConfigError: listing every problem found
    """
    if isinstance(text, dict):
        raw = text
    else:
        raw = Config.from_text(text).config
    if not isinstance(raw, dict):
        raise ConfigError("configuration document must be a mapping")
    doc = copy.deepcopy(raw)

    v = _Validator()
    v.unknown(doc, TOP_LEVEL, "<root>")
    if doc.get("units") != UNITS_MARKER:
        v.problems.append(f"missing or wrong unit marker: expected units: {UNITS_MARKER!r}")

    axes = _axes_from_document(doc, v) if "sweep" in doc else None
    scenario = _scenario_from_document(doc, v)
    if v.problems or scenario is None:
        raise ConfigError(v.problems or ["invalid configuration"])

    if axes is None:
        return scenario
    return SweepSpec(base=scenario, axes=axes, document=doc)


def load_config(path: Union[str, Path]) -> Union[ScenarioConfig, SweepSpec]:
    """Read and parse a configuration file."""
    return parse_config(Config(str(path)).config)


def emit_document(cfg: Union[ScenarioConfig, SweepSpec]) -> str:
    """YAML text of the normalized document; parse_config of it rebuilds `cfg`."""
    return yaml.safe_dump(cfg.document, sort_keys=True)


def scenario_document(base: ScenarioConfig, **overrides) -> dict:
    """
    Copy of the base document with sweep-cell overrides applied:
    `Delta_c_over_Omega_c`, `Delta_Gamma`, `Delta_G`, `t_end`, `fixed_dt`.
    """
    doc = copy.deepcopy(base.document)
    doc.pop("sweep", None)
    if "Delta_c_over_Omega_c" in overrides:
        ratio = overrides["Delta_c_over_Omega_c"]
        doc["controller"]["Delta_c"] = ratio * doc["controller"]["Omega_c"]
        doc["label"] = f"{base.label}[Delta_c/Omega_c={ratio:g}]"
    if "Delta_Gamma" in overrides or "Delta_G" in overrides:
        d_gamma = overrides.get("Delta_Gamma", 0.0)
        d_g = overrides.get("Delta_G", 0.0)
        osc1 = doc["oscillators"]["osc1"]
        doc["oscillators"]["osc2"] = dict(osc1, Gamma=osc1["Gamma"] * (1.0 - d_gamma), g=osc1["g"] * (1.0 - d_g))
        doc["label"] = f"{base.label}[Delta_Gamma={d_gamma:g},Delta_G={d_g:g}]"
    if overrides.get("t_end") is not None:
        doc["run"]["t_end"] = float(overrides["t_end"])
    if overrides.get("fixed_dt") is not None:
        doc["run"]["integrator"]["method"] = "fixed"
        doc["run"]["integrator"]["dt"] = float(overrides["fixed_dt"])
    return doc


def with_overrides(cfg: Union[ScenarioConfig, SweepSpec], **overrides):
    """Re-parse `cfg` with CLI-style overrides (t_end, fixed_dt)."""
    if isinstance(cfg, SweepSpec):
        base_doc = scenario_document(cfg.base, **overrides)
        base_doc["sweep"] = copy.deepcopy(cfg.document["sweep"])
        return parse_config(base_doc)
    return parse_config(scenario_document(cfg, **overrides))
