"""From-scratch regressors used for gaze vectors and gaze depth."""

from __future__ import annotations

from functools import partial

from .cv import CvReport, cross_validate, kfold_assignment
from .linear import (
    BayesianRidgeModel,
    BrConfig,
    EnetConfig,
    LinConfig,
    LinearModel,
    fit_bayesian_ridge,
    fit_elastic_net,
    fit_linear,
)
from .metrics import mae, mse, r2
from .svr import MultiOutputSvr, SvrConfig, SvrModel, fit_svr, fit_svr_multi
from .trees import GbrConfig, GbrModel, fit_gbr

# Fixed order; also the tie-break order for model selection.
MODEL_KINDS = ("lr", "br", "enet", "svr", "gbr")

_FITTERS = {
    "lr": (fit_linear, LinConfig),
    "br": (fit_bayesian_ridge, BrConfig),
    "enet": (fit_elastic_net, EnetConfig),
    "svr": (fit_svr, SvrConfig),
    "gbr": (fit_gbr, GbrConfig),
}


def fit_model(kind: str, X, y, config=None):
    try:
        fitter, cfg_cls = _FITTERS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}") from None
    return fitter(X, y, config if config is not None else cfg_cls())


def model_factory(kind: str, config=None):
    return partial(fit_model, kind, config=config)


def model_from_dict(d: dict):
    kind = d["kind"]
    if kind in ("lr", "enet"):
        return LinearModel.from_dict(d)
    if kind == "br":
        return BayesianRidgeModel.from_dict(d)
    if kind == "svr":
        return SvrModel.from_dict(d)
    if kind == "svr_multi":
        return MultiOutputSvr.from_dict(d)
    if kind == "gbr":
        return GbrModel.from_dict(d)
    raise ValueError(f"unknown serialized model kind {kind!r}")


def model_to_dict(model) -> dict:
    d = model.to_dict()
    if "kind" not in d:
        raise ValueError("model did not report its kind")
    return d
