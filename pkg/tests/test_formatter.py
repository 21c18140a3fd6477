from utils.formatter import ReportFormatter


def closed_metrics(**extra):
    data = {
        "n_rollouts": 100,
        "epsilon": 0.0,
        "safe_pct": 44.0,
        "wrapped_safe_pct": 100.0,
        "interv_pct": 58.0,
        "candidate_infeasible": 0,
        "reason_pcts": {"State": 93.1, "Terminal": 100.0, "Cost": 0.0},
    }
    data.update(extra)
    return data


def test_terminal_summary():
    text = ReportFormatter.format_terminal("quadcopter", {"rho": 0.5, "alpha": 3.2, "epsilon": 0.0,
                                                         "kappa": 1.0, "checksum": "deadbeef"})
    assert "quadcopter" in text
    assert "0.500000" in text
    assert "deadbeef" in text
    assert "epsilon" not in text


def test_closed_loop_table():
    text = ReportFormatter.format_closed_loop({"quadcopter/rnn": closed_metrics()})
    assert "quadcopter/rnn" in text
    assert "44.0%" in text and "100.0%" in text and "58.0%" in text


def test_reasons_table():
    text = ReportFormatter.format_reasons({"dynamic/rnn": closed_metrics()})
    assert "93.1%" in text
    assert "0.0%" in text


def test_open_loop_table_missing_fields():
    text = ReportFormatter.format_open_loop({"kinematic": {"rnn": {"feas_pct": 99.5}, "mlp": {}}})
    assert "99.5%" in text
    lines = text.splitlines()
    assert any(line.startswith("kinematic") and line.rstrip().endswith("-") for line in lines)


def test_scaling_and_comparison():
    rows = [{"fraction": 0.25, "rows": 50, "epochs": 12, "feas_pct": 90.0, "safe_pct": 80.0, "interv_pct": 20.0}]
    assert "0.25x" in ReportFormatter.format_scaling("quadcopter", rows)
    results = {"mlp": {"params": 10, "best_val_loss": 0.01, "epochs": 5, "feas_pct": 50.0, "curves": {"a": [1.0]}}}
    assert "mlp" in ReportFormatter.format_comparison("quadcopter", ReportFormatter.summary_dict(results))
    assert "curves" not in ReportFormatter.summary_dict(results)["mlp"]


def test_train_summary():
    text = ReportFormatter.format_train("rnn", {"stop_reason": "EarlyStop", "epochs_run": 30,
                                                "best_val_loss": 1e-3, "best_epoch": 19})
    assert "EarlyStop" in text and "30" in text and "20" in text
