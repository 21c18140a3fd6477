from typing import Any, Dict, List, Mapping, Optional


def _pct(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.1f}%"


def _table(header: List[str], rows: List[List[str]]) -> List[str]:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]

    def line(cells: List[str]) -> str:
        return "  ".join(str(c).ljust(w) for c, w in zip(cells, widths))

    return [line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]


class ReportFormatter:
    """Текстовые сводки для консоли и команды report"""

    @staticmethod
    def format_terminal(benchmark: str, summary: Mapping[str, Any]) -> str:
        """
        Итог синтеза терминальных ингредиентов

        Args:
            benchmark: Имя бенчмарка
            summary: Поля rho, alpha, kappa, epsilon, checksum

        Returns:
            Отформатированное сообщение
        """
        lines = [
            f"Терминальные ингредиенты: {benchmark}",
            f"  rho(A + B K_f) = {summary['rho']:.6f}",
            f"  alpha          = {summary['alpha']:.6g}",
        ]
        if summary.get("epsilon"):
            lines.append(f"  epsilon        = {summary['epsilon']:.3g} (kappa = {summary['kappa']:.4g})")
        if summary.get("checksum"):
            lines.append(f"  sha256         = {summary['checksum']}")
        return "\n".join(lines)

    @staticmethod
    def format_train(arch: str, report: Mapping[str, Any]) -> str:
        return (
            f"Обучение {arch}: {report['stop_reason']} после {report['epochs_run']} эпох, "
            f"лучшая валидация {report['best_val_loss']:.4e} (эпоха {report['best_epoch'] + 1})"
        )

    @staticmethod
    def format_open_loop(results: Mapping[str, Mapping[str, Any]]) -> str:
        """
        Допустимость в разомкнутом контуре по бенчмаркам и архитектурам

        Args:
            results: {benchmark: {arch: {"feas_pct", "epochs", "params"}}}
        """
        rows = []
        for benchmark, by_arch in sorted(results.items()):
            for arch, m in sorted(by_arch.items()):
                rows.append([benchmark, arch, str(m.get("params", "-")), str(m.get("epochs", "-")),
                             _pct(m.get("feas_pct"))])
        lines = ["Разомкнутый контур (Feas.)", ""]
        lines += _table(["бенчмарк", "арх.", "параметры", "эпохи", "Feas."], rows)
        return "\n".join(lines)

    @staticmethod
    def format_closed_loop(results: Mapping[str, Mapping[str, Any]]) -> str:
        """Safe % наивной политики, Safe % обертки и Interv. %"""
        rows = []
        for key, m in sorted(results.items()):
            rows.append([key, str(m["n_rollouts"]), f"{m.get('epsilon', 0.0):g}", _pct(m["safe_pct"]),
                         _pct(m["wrapped_safe_pct"]), _pct(m["interv_pct"]),
                         str(m.get("candidate_infeasible", 0))])
        lines = ["Замкнутый контур", ""]
        lines += _table(["запуск", "M", "eps", "Safe", "Safe (обертка)", "Interv.", "канд. недоп."], rows)
        return "\n".join(lines)

    @staticmethod
    def format_reasons(results: Mapping[str, Mapping[str, Any]]) -> str:
        """Причины применения кандидата; доли считаются по прогонам с вмешательством"""
        rows = []
        for key, m in sorted(results.items()):
            r = m["reason_pcts"]
            rows.append([key, _pct(r.get("State")), _pct(r.get("Terminal")), _pct(r.get("Cost"))])
        lines = ["Причины вмешательства (сумма может превышать 100%)", ""]
        lines += _table(["запуск", "State", "Term.", "Cost"], rows)
        return "\n".join(lines)

    @staticmethod
    def format_scaling(benchmark: str, rows: List[Mapping[str, Any]]) -> str:
        table = [[f"{r['fraction']:g}x", str(r["rows"]), str(r["epochs"]), _pct(r["feas_pct"]),
                  _pct(r["safe_pct"]), _pct(r["interv_pct"])] for r in rows]
        lines = [f"Масштабирование по данным: {benchmark}", ""]
        lines += _table(["доля", "строк", "эпохи", "Feas.", "Safe", "Interv."], table)
        return "\n".join(lines)

    @staticmethod
    def format_comparison(benchmark: str, results: Mapping[str, Mapping[str, Any]]) -> str:
        table = [[arch, str(m["params"]), f"{m['best_val_loss']:.4e}", f"{m['epochs']:g}", _pct(m["feas_pct"])]
                 for arch, m in sorted(results.items())]
        lines = [f"Сравнение архитектур (медианы по зернам): {benchmark}", ""]
        lines += _table(["арх.", "параметры", "лучшая вал.", "эпохи", "Feas."], table)
        return "\n".join(lines)

    @staticmethod
    def summary_dict(results: Dict[str, Any]) -> Dict[str, Any]:
        """Сводка без кривых обучения (для YAML-метрик)"""
        return {k: {kk: vv for kk, vv in v.items() if kk != "curves"} for k, v in results.items()}
