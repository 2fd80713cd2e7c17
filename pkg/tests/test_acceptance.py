"""Desk-scale CIFAR-10 runs; deselected by default (pytest -m slow) and skipped without the archive."""

import math

import pytest
import torch

from checkpoint import load_checkpoint
from config import load_config
from conftest import CIFAR_ROOT, cifar_available
from evaluation import psnr
from image_io import decode_float_tiff
from ITN_protect import cmd_attack, cmd_eval, cmd_train, load_split
from Networks import classify, forward_transform
from server import ClassifierClient, client_protect_and_submit, create_app
from test_server import BASE_URL, FlaskSession
from training import read_metrics

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(not cifar_available(), reason="CIFAR-10 archive not present"),
]

ATTACK_BUDGET = ["attack.epochs=50", "attack.lr_milestones=[25,40]", "attack.max_pairs=2000"]


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    runs = {}
    for alpha in (0.0, 0.005):
        cfg = load_config("desk_cifar10", [f"train.alpha={alpha}", f"data.root={CIFAR_ROOT}", *ATTACK_BUDGET])
        run_dir = out / f"alpha_{alpha:g}"
        outcome = cmd_train(cfg, run_dir)
        report = cmd_eval(cfg, outcome.transform_path, outcome.classifier_path, run_dir)
        runs[alpha] = (cfg, run_dir, outcome, report)
    return runs


@pytest.fixture(scope="module")
def control(desk, tmp_path_factory):
    cfg = desk[0.005][0]
    return cmd_attack(cfg, None, tmp_path_factory.mktemp("control"), identity=True)


def test_protected_accuracy_beats_chance(desk):
    assert desk[0.005][3].accuracy_percent >= 35.0


def test_feature_term_engages(desk):
    final = {alpha: read_metrics(run_dir / "metrics.csv")[-1].train_feat for alpha, (_, run_dir, _, _) in desk.items()}
    assert final[0.005] > final[0.0]


def test_protection_lowers_psnr(desk):
    assert desk[0.005][3].mean_psnr < desk[0.0][3].mean_psnr


def test_identity_attack_reconstructs_well(control):
    median = control.box.median if control.box is not None else math.inf
    assert median > 25.0


def test_attack_falls_short_of_positive_control(desk, control, tmp_path):
    cfg, _, outcome, _ = desk[0.005]
    attacked = cmd_attack(cfg, outcome.transform_path, tmp_path / "attack")
    control_median = control.box.median if control.box is not None else math.inf
    assert attacked.box.median <= control_median - 10.0


def test_served_probabilities_match_local_pipeline(desk):
    cfg, _, outcome, _ = desk[0.005]
    h, _ = load_checkpoint(outcome.transform_path)
    psi, _ = load_checkpoint(outcome.classifier_path)
    images = load_split(cfg).test.head(100).images()
    session = FlaskSession(create_app(psi, "desk"))
    responses = client_protect_and_submit(h, images, ClassifierClient(BASE_URL, session=session))
    local = classify(psi, forward_transform(h, images))
    served = torch.tensor([r.probabilities for r in responses])
    assert torch.allclose(served, local, atol=1e-5, rtol=0)
    sent = [decode_float_tiff(body, 3) for body in session.bodies]
    assert all(psnr(payload, plain) < 15.0 for payload, plain in zip(sent, images))
