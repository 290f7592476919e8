"""Versioned JSON instance files."""
import json
import logging
from pathlib import Path

from core.exceptions import IngestionError, InvalidInputError
from rankings.kernels import Profile, validate_ranking

logger = logging.getLogger(__name__)

FORMAT = 'kemeny-instance'
VERSION = 1


def profile_to_document(profile: Profile) -> dict:
    return {
        'format': FORMAT,
        'version': VERSION,
        'n': profile.n,
        'm': profile.m,
        'item_labels': list(profile.item_labels) if profile.item_labels else None,
        'rankings': [list(ranking.order) for ranking in profile.rankings],
        'provenance': profile.provenance or {},
    }


def dumps(profile: Profile) -> str:
    return json.dumps(profile_to_document(profile), indent=2, sort_keys=True) + '\n'


def profile_from_document(document: dict, source='<document>') -> Profile:
    if not isinstance(document, dict) or document.get('format') != FORMAT:
        raise IngestionError(f"{source} is not a {FORMAT} document")
    if document.get('version') != VERSION:
        raise IngestionError(f"{source} has unsupported version {document.get('version')!r}")
    n, m, rankings = document.get('n'), document.get('m'), document.get('rankings')
    if not isinstance(rankings, list) or len(rankings) != m:
        raise IngestionError(f"{source} declares m={m} but holds {len(rankings or [])} rankings")
    for index, order in enumerate(rankings):
        if not validate_ranking(order, n):
            raise IngestionError(f"ranking {index} is not a permutation of 0..{n - 1}", row=index)
    try:
        return Profile(rankings=tuple(tuple(order) for order in rankings),
                       item_labels=tuple(document['item_labels']) if document.get('item_labels') else None,
                       provenance=document.get('provenance') or {})
    except InvalidInputError as error:
        raise IngestionError(f"{source}: {error}") from error


def write_instance(profile: Profile, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(profile), encoding='utf-8')
    return path


def read_instance(path) -> Profile:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as error:
        raise IngestionError(f"{path} is not valid JSON: {error.msg}", row=error.lineno) from error
    return profile_from_document(document, source=str(path))


def instance_name(kind, n, m, seed, index) -> str:
    return f"{kind}_n{n}_m{m}_s{seed}_{index:05d}.json"


def list_instances(directory):
    paths = sorted(Path(directory).glob('*.json'))
    if not paths:
        raise InvalidInputError(f"no instance files in {directory}")
    return paths
