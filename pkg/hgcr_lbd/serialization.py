from pathlib import Path
from typing import Iterable
from typing import Iterator
from typing import List
from typing import Type
from typing import TypeVar
from typing import Union

from xsdata.exceptions import ParserError
from xsdata.formats.dataclass.parsers import JsonParser
from xsdata.formats.dataclass.serializers import JsonSerializer

from .exceptions import ParseError

T = TypeVar("T")

PathLike = Union[str, Path]

_serializer = JsonSerializer()
_parser = JsonParser()


def dumps(obj) -> str:
    """One record as a single compact JSON line (no trailing newline)."""
    return _serializer.render(obj)


def loads(line: str, clazz: Type[T]) -> T:
    try:
        return _parser.from_string(line, clazz)
    except (ParserError, ValueError, TypeError) as e:
        raise ParseError(f"cannot bind {clazz.__name__}: {e}") from e


def write_records(path: PathLike, records: Iterable) -> int:
    count = 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(dumps(record))
            f.write("\n")
            count += 1
    return count


def iter_records(path: PathLike, clazz: Type[T]) -> Iterator[T]:
    with Path(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield loads(line, clazz)
            except ParseError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from e


def read_records(path: PathLike, clazz: Type[T]) -> List[T]:
    return list(iter_records(path, clazz))


def write_document(path: PathLike, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n", encoding="utf-8")


def read_document(path: PathLike, clazz: Type[T]) -> T:
    return loads(Path(path).read_text(encoding="utf-8"), clazz)
