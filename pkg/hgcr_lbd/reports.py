from pathlib import Path
from typing import Optional

from jinja2 import Environment
from jinja2 import FileSystemLoader


TEMPLATES_DIR = Path(__file__).parent.joinpath("templates")


class ReportFilters:
    """Formatting filters shared by the prompt and report templates."""

    def __init__(self, precision: int = 4):
        self.precision = precision

    def register(self, env: Environment):
        env.filters.update(
            {
                "num": self.num,
                "pm": self.pm,
                "nodes": self.nodes,
            }
        )

    def num(self, value: Optional[float], precision: Optional[int] = None) -> str:
        if value is None:
            return "-"
        if isinstance(value, int):
            return str(value)
        return f"{value:.{self.precision if precision is None else precision}f}"

    def pm(self, mean: Optional[float], std: Optional[float]) -> str:
        return f"{self.num(mean)} ± {self.num(std)}"

    def nodes(self, names) -> str:
        return " -> ".join(names)


_env: Optional[Environment] = None


def environment() -> Environment:
    global _env
    if _env is None:
        _env = Environment(
            loader=FileSystemLoader(str(TEMPLATES_DIR)),
            autoescape=False,
            keep_trailing_newline=True,
        )
        ReportFilters().register(_env)
    return _env


def render(template: str, **context) -> str:
    return environment().get_template(template).render(**context)


def write_report(path, template: str, **context) -> str:
    text = render(template, **context)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return text
