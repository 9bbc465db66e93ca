import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd

from config.app_config import AppConfig
from utils.errors import FormatVersionError, ShapeMismatchError


@dataclass
class Utterance:
    id: str
    frames: np.ndarray
    reference: str
    # generator annotations (pure-noise utterances, silence frames); not serialized
    tags: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.frames.shape[1])


class DataProcessor:
    """Read, write and summarize utterance files.

    One record per line: ``id<TAB>T<TAB>F<TAB>json(reference)<TAB>base64(f32 LE)``,
    after a ``#utts<TAB>version<TAB>N`` header line.
    """

    HEADER = "#utts"

    @staticmethod
    def encode_record(utterance: Utterance) -> str:
        frames = np.asarray(utterance.frames, dtype="<f4")
        payload = base64.b64encode(frames.tobytes()).decode("ascii")
        return "\t".join([
            utterance.id,
            str(frames.shape[0]),
            str(frames.shape[1]),
            json.dumps(utterance.reference, ensure_ascii=False),
            payload,
        ])

    @staticmethod
    def decode_record(line: str) -> Utterance:
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 5:
            raise FormatVersionError(f"utterance record has {len(parts)} fields, expected 5")
        utt_id, n_frames, n_features, reference, payload = parts
        n_frames, n_features = int(n_frames), int(n_features)
        values = np.frombuffer(base64.b64decode(payload), dtype="<f4")
        if values.size != n_frames * n_features:
            raise ShapeMismatchError(
                f"utterance {utt_id}: {values.size} values for a {n_frames}x{n_features} matrix"
            )
        return Utterance(utt_id, values.reshape(n_frames, n_features).astype(np.float64), json.loads(reference))

    @staticmethod
    def write_utterances(path, utterances: Sequence[Utterance]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"{DataProcessor.HEADER}\tversion\t{AppConfig.DATASET_FORMAT_VERSION}"]
        lines += [DataProcessor.encode_record(u) for u in utterances]
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write("\n".join(lines) + "\n")
        return path

    @staticmethod
    def read_utterances(path) -> List[Utterance]:
        with open(Path(path), "r", encoding="utf-8") as handle:
            lines = [line for line in handle.read().split("\n") if line]
        if not lines or not lines[0].startswith(DataProcessor.HEADER):
            raise FormatVersionError(f"{path} is not an utterance file")
        version = lines[0].split("\t")[-1]
        if version != str(AppConfig.DATASET_FORMAT_VERSION):
            raise FormatVersionError(f"unsupported utterance file version {version!r}")
        return [DataProcessor.decode_record(line) for line in lines[1:]]

    @staticmethod
    def split_path(data_dir, split: str) -> Path:
        return Path(data_dir) / f"{split}{AppConfig.DATASET_SUFFIX}"

    @staticmethod
    def load_split(data_dir, split: str) -> List[Utterance]:
        return DataProcessor.read_utterances(DataProcessor.split_path(data_dir, split))

    @staticmethod
    def read_lm_corpus(data_dir) -> List[str]:
        with open(Path(data_dir) / AppConfig.LM_CORPUS_FILE, "r", encoding="utf-8") as handle:
            return [line for line in handle.read().split("\n") if line]

    @staticmethod
    def get_data_profile(utterances: Sequence[Utterance]) -> Dict[str, Any]:
        """Frame and label statistics for a split."""
        if not utterances:
            return {"utterances": 0}
        frame = pd.DataFrame({
            "frames": [u.n_frames for u in utterances],
            "symbols": [len(u.reference) for u in utterances],
        })
        return {
            "utterances": len(utterances),
            "total_frames": int(frame["frames"].sum()),
            "mean_frames": float(frame["frames"].mean()),
            "mean_symbols": float(frame["symbols"].mean()),
            "max_symbols": int(frame["symbols"].max()),
            "empty_references": int((frame["symbols"] == 0).sum()),
            "frames_per_symbol": float(frame["frames"].sum() / max(frame["symbols"].sum(), 1)),
        }
