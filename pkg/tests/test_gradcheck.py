import numpy as np

from phonepool.nnet.gradcheck import (GradCheckResult, grad_check,
                                      standard_gradcheck_battery)


def test_battery_passes_at_stated_tolerances():
    for result, tol in standard_gradcheck_battery():
        assert result.ok, f"{result.name}: non-finite gradients {result.nonfinite}"
        assert result.max_rel_err <= tol, \
            f"{result.name}: {result.max_rel_err:.3e} > {tol}"


def test_battery_covers_required_modules():
    names = {res.name for res, _ in standard_gradcheck_battery()}
    for needed in ("attention", "lstm_cell", "nin_block_batchnorm",
                   "encoder_train_batchnorm", "decoder_steps", "smoothed_loss"):
        assert needed in names


def test_nonfinite_gradient_reported_by_name():
    params = {"w": np.ones(2)}

    def fn(p, compute_grads):
        loss = float(p["w"].sum())
        return loss, ({"w": np.array([np.nan, 1.0])} if compute_grads else None)

    result = grad_check(fn, params, name="bad")
    assert not result.ok
    assert result.nonfinite == ["w"]


def test_detects_a_wrong_gradient():
    params = {"w": np.array([0.3, -0.2])}

    def fn(p, compute_grads):
        loss = float((p["w"] ** 2).sum())
        if not compute_grads:
            return loss, None
        return loss, {"w": 2.0 * p["w"] + 0.05}  # deliberately off

    result = grad_check(fn, params, name="off")
    assert result.max_rel_err > 1e-3
