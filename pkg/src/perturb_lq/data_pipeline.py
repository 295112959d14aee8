"""Price ingestion and feature construction for the benchmark-tracking problem.

Per-ticker CSVs (date, adj_close, volume) are aligned on common trading days,
turned into log returns, and regressed on a rolling window to get target
sector exposures. Their one-step drift is the additive noise of the tracking
dynamics ``x_{t+1} = x_t - u_t + w_t``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve

from .ambiguity import NoiseModel, broadcast_noise
from .errors import (
    IllConditioned,
    InsufficientHistory,
    InvalidConfig,
    MalformedCsv,
    NonpositivePrice,
    NoOverlap,
)
from .lq_core import InitialState, LqProblem

COLUMNS = ("date", "adj_close", "volume")
OLS_COND_CAP = 1e10


@dataclass(frozen=True)
class PriceTable:
    """Aligned adjusted closes (benchmark first) and sector share volumes."""

    prices: pd.DataFrame
    volumes: pd.DataFrame
    benchmark_name: str

    @property
    def tickers(self):
        return [c for c in self.prices.columns if c != self.benchmark_name]

    @property
    def dates(self):
        return self.prices.index

    @property
    def benchmark(self):
        return self.prices[self.benchmark_name]

    @property
    def sectors(self):
        return self.prices[self.tickers]

    def truncate(self, end):
        """Rows dated on or before ``end``."""
        return PriceTable(self.prices.loc[:end], self.volumes.loc[:end], self.benchmark_name)


def _read_one(path: Path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise MalformedCsv(path, 1, f"unreadable: {exc}") from None
    except pd.errors.EmptyDataError:
        raise MalformedCsv(path, 1, "file is empty") from None
    missing = [c for c in COLUMNS if c not in df.columns]
    if missing:
        raise MalformedCsv(path, 1, f"missing columns {missing}")
    out = {}
    # data row i sits on line i + 2 (header is line 1)
    for col in COLUMNS:
        vals = df[col].str.strip()
        if col == "date":
            parsed = pd.to_datetime(vals, format="ISO8601", errors="coerce")
            bad = parsed.isna()
        else:
            parsed = pd.to_numeric(vals.replace("", np.nan), errors="coerce")
            bad = parsed.isna() & (vals != "")
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise MalformedCsv(path, i + 2, f"bad {col} value {df[col].iloc[i]!r}")
        out[col] = parsed
    frame = pd.DataFrame(out)
    dup = frame["date"].duplicated()
    if dup.any():
        i = int(np.flatnonzero(dup.to_numpy())[0])
        raise MalformedCsv(path, i + 2, f"duplicate date {df['date'].iloc[i]}")
    return frame.set_index("date").sort_index()


def load_prices(source, benchmark="SPY") -> PriceTable:
    """Load one CSV per ticker from a directory or a list of paths.

    The ticker is the file stem. Rows where the benchmark or any sector lacks a
    price (or a sector lacks a volume) are dropped; output is sorted by date.
    """
    if isinstance(source, (str, Path)) and Path(source).is_dir():
        paths = sorted(Path(source).glob("*.csv"))
    else:
        paths = [Path(p) for p in ([source] if isinstance(source, (str, Path)) else source)]
    frames = {p.stem: _read_one(p) for p in paths}
    if benchmark not in frames:
        raise InvalidConfig(f"no CSV for benchmark {benchmark!r} among {sorted(frames)}")
    tickers = sorted(t for t in frames if t != benchmark)
    if not tickers:
        raise InvalidConfig("need at least one sector CSV besides the benchmark")
    names = [benchmark] + tickers
    prices = pd.concat({t: frames[t]["adj_close"] for t in names}, axis=1)
    volumes = pd.concat({t: frames[t]["volume"] for t in tickers}, axis=1).reindex(prices.index)
    keep = prices.notna().all(axis=1) & volumes.notna().all(axis=1)
    prices, volumes = prices[keep], volumes[keep]
    if prices.empty:
        raise NoOverlap("no trading day has prices for every ticker")
    prices.index.name = volumes.index.name = "date"
    return PriceTable(prices, volumes, benchmark)


def log_returns(table: PriceTable) -> pd.DataFrame:
    """Daily log differences, one row per day after the first, benchmark column first."""
    p = table.prices
    if (p <= 0).any().any():
        col = p.columns[(p <= 0).any()][0]
        raise NonpositivePrice(f"non-positive price in {col}")
    return np.log(p).diff().iloc[1:]


def _window_fit(X, y, alpha):
    N = X.T @ X
    if alpha == 0:
        ev = np.linalg.eigvalsh(N)
        if ev[0] <= 0 or ev[-1] / ev[0] > OLS_COND_CAP:
            raise IllConditioned("normal matrix is ill-conditioned; use a ridge penalty alpha > 0")
    else:
        N = N + alpha * np.eye(N.shape[0])
    return cho_solve(cho_factor(N), X.T @ y)


def rolling_ols_exposures(returns: pd.DataFrame, L_ols: int, alpha: float = 0.0) -> pd.DataFrame:
    """No-intercept regression of the first column on the others over each trailing window.

    Row t uses returns up to and including day t only; the first ``L_ols - 1``
    days have no estimate and are omitted.
    """
    if L_ols < 2:
        raise InvalidConfig("L_ols must be >= 2")
    if alpha < 0:
        raise InvalidConfig("ridge alpha must be non-negative")
    if len(returns) < L_ols:
        raise InsufficientHistory(f"{len(returns)} return rows, window needs {L_ols}")
    y = returns.iloc[:, 0].to_numpy()
    X = returns.iloc[:, 1:].to_numpy()
    rows = [_window_fit(X[e - L_ols + 1:e + 1], y[e - L_ols + 1:e + 1], alpha) for e in range(L_ols - 1, len(y))]
    return pd.DataFrame(np.array(rows), index=returns.index[L_ols - 1:], columns=returns.columns[1:])


def winsorize(returns: pd.DataFrame, n_rows: int, lo=0.01, hi=0.99) -> pd.DataFrame:
    """Clip the first ``n_rows`` rows of each column at their own linear-interpolated quantiles."""
    out = returns.copy()
    head = returns.iloc[:n_rows]
    ql = head.quantile(lo, interpolation="linear")
    qh = head.quantile(hi, interpolation="linear")
    out.iloc[:n_rows] = head.clip(ql, qh, axis=1)
    return out


@dataclass
class TrackingConfig:
    """Calibration settings for the tracking problem.

    ``units`` is "shares" (exposures rescaled by ``notional / price``) or
    "dollars". ``x0_std`` > 0 draws the initial deviation from N(0, x0_std^2 I)
    instead of starting at zero. ``calibration_end`` fixes the last calibration
    date; by default the final ``T`` drifts are held out.
    """

    L_ols: int = 60
    L_vol: int | None = None
    L_adv: int = 60
    T: int = 120
    lambda_step: float = 10.0
    q_bar: float = 1e6
    kappa_tc: float = 1e-6
    alpha: float = 0.0
    winsorize: bool = False
    units: str = "shares"
    notional: float = 1e6
    x0_std: float = 0.0
    calibration_end: str | None = None
    benchmark: str = "SPY"

    def __post_init__(self):
        if self.L_vol is None:
            self.L_vol = self.L_ols
        for name in ("L_ols", "L_vol", "L_adv"):
            if int(getattr(self, name)) < 2:
                raise InvalidConfig(f"{name} must be >= 2")
        if self.T < 1:
            raise InvalidConfig("T must be >= 1")
        for name in ("lambda_step", "q_bar", "kappa_tc", "notional"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.alpha < 0 or self.x0_std < 0:
            raise InvalidConfig("alpha and x0_std must be non-negative")
        if self.units not in ("shares", "dollars"):
            raise InvalidConfig("units must be 'shares' or 'dollars'")

    def replace(self, **changes):
        d = asdict(self)
        if "L_ols" in changes and "L_vol" not in changes and self.L_vol == self.L_ols:
            d["L_vol"] = None
        d.update(changes)
        return TrackingConfig(**d)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrackingProblem:
    """Assembled tracking LQ problem plus the calibration features behind it."""

    problem: LqProblem
    noise: NoiseModel
    init: InitialState
    holdout: np.ndarray | None
    features: dict = field(default_factory=dict)
    exposures: pd.DataFrame | None = field(default=None, repr=False)

    def to_dict(self):
        d = {"problem": self.problem.to_dict(), "noise": self.noise.to_dict(), "init": self.init.to_dict()}
        d["features"] = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.features.items()}
        return d

    def write(self, json_path, noise_csv_path):
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=1))
        samples = self.noise.samples[0]
        cols = [f"w{j}" for j in range(samples.shape[1])]
        pd.DataFrame(samples, columns=cols).to_csv(noise_csv_path, index=False, float_format="%.17g")


def calibration_features(table: PriceTable, cfg: TrackingConfig, end=None) -> dict:
    """Daily vol, last price and average volume from data dated on or before ``end``."""
    tab = table if end is None else table.truncate(end)
    rets = log_returns(tab)
    if len(rets) < cfg.L_vol or len(tab.volumes) < cfg.L_adv:
        raise InsufficientHistory("not enough rows for the volatility or volume window")
    sigma_daily = float(rets.iloc[-cfg.L_vol:, 0].std(ddof=1))
    S0 = tab.sectors.iloc[-1].to_numpy(dtype=float)
    adv = tab.volumes.iloc[-cfg.L_adv:].mean().to_numpy(dtype=float)
    return {"sigma_daily": sigma_daily, "S0": S0, "ADV": adv}


def build_tracking_problem(table: PriceTable, cfg: TrackingConfig) -> TrackingProblem:
    """Calibrate Q, R, Q_T and the drift noise on the calibration sample."""
    rets = log_returns(table)
    if cfg.calibration_end is None:
        n_cal = len(rets) - cfg.T
    else:
        n_cal = int(np.searchsorted(rets.index, pd.Timestamp(cfg.calibration_end), side="right"))
    need = max(cfg.L_ols + 2, cfg.L_vol, cfg.L_adv - 1)
    if n_cal < need:
        raise InsufficientHistory(f"calibration sample has {n_cal} return rows, need at least {need}")
    if cfg.winsorize:
        rets = winsorize(rets, n_cal)
    expo = rolling_ols_exposures(rets, cfg.L_ols, cfg.alpha)
    drift = expo.diff().iloc[1:]
    end_date = rets.index[n_cal - 1]
    cal = drift.loc[:end_date].to_numpy()
    rest = drift.loc[drift.index > end_date].to_numpy()
    holdout = rest[: cfg.T] if len(rest) >= cfg.T else None

    # volatility uses the (possibly trimmed) calibration returns
    sigma_daily = float(rets.iloc[n_cal - cfg.L_vol:n_cal, 0].std(ddof=1))
    feats = calibration_features(table, cfg, end_date)
    feats["sigma_daily"] = sigma_daily
    S0, adv = feats["S0"], feats["ADV"]
    if np.any(adv <= 0):
        raise InvalidConfig("average daily volume must be positive")
    sigma_step = sigma_daily / np.sqrt(cfg.T)
    c = cfg.kappa_tc * S0**2 / adv
    if cfg.units == "shares":
        scale = cfg.notional / S0
    else:
        scale = np.full_like(S0, cfg.notional)
        c = c / S0**2
    m = len(S0)
    I = np.eye(m)
    problem = LqProblem(
        T=cfg.T, A=I, B=-I, D=I,
        Q=cfg.lambda_step * sigma_step**2 * I,
        R=np.diag(c),
        QT=cfg.q_bar * I,
    )
    noise = broadcast_noise(cal * scale, cfg.T)
    if cfg.x0_std > 0:
        init = InitialState.gaussian(np.zeros(m), cfg.x0_std**2 * I)
    else:
        init = InitialState.deterministic(np.zeros(m))
    feats.update(sigma_step=sigma_step, c=c, scale=scale, n_calibration_drifts=len(cal),
                 calibration_end=str(end_date.date()))
    return TrackingProblem(problem, noise, init, None if holdout is None else holdout * scale, feats, expo)


def synthetic_market(n_days=400, n_sectors=3, seed=0, benchmark="SPY", start="2020-01-02"):
    """Deterministic fake market: Gaussian sector returns and a benchmark with drifting loadings.

    Returns ``{ticker: DataFrame(date, adj_close, volume)}``.
    """
    rng = np.random.default_rng(seed)
    dates = pd.bdate_range(start, periods=n_days + 1)
    vols = 0.008 + 0.006 * rng.random(n_sectors)
    r_sec = rng.standard_normal((n_days, n_sectors)) * vols
    load = 1.0 / n_sectors + np.cumsum(0.01 * rng.standard_normal((n_days, n_sectors)), axis=0)
    r_bench = np.sum(load * r_sec, axis=1) + 0.002 * rng.standard_normal(n_days)
    names = [f"S{j:02d}" for j in range(n_sectors)]
    out = {}
    series = np.column_stack([r_bench, r_sec])
    start_px = np.concatenate([[400.0], 40 + 80 * rng.random(n_sectors)])
    adv = np.concatenate([[8e7], 10 ** rng.uniform(6, 7, n_sectors)])
    for j, name in enumerate([benchmark] + names):
        px = start_px[j] * np.exp(np.concatenate([[0.0], np.cumsum(series[:, j])]))
        vol = np.round(adv[j] * np.exp(0.3 * rng.standard_normal(n_days + 1))).astype(np.int64)
        out[name] = pd.DataFrame({"date": dates.strftime("%Y-%m-%d"), "adj_close": np.round(px, 6), "volume": vol})
    return out


def write_market(market: dict, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, df in market.items():
        df.to_csv(directory / f"{name}.csv", index=False)
    return directory
