"""On-disk map index: ``manifest.json`` plus per-entry tensor and cloud files."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from .config import PipelineConfig, config_from_dict
from .errors import ConfigMismatch, FormatError
from .features import FeatureBEV
from .localization import MapEntry, MapIndex
from .poses import Pose3
from .scan_io import load_cloud, save_cloud
from .tensor_io import TAG_BEV, TAG_NTING, read_tensor, write_tensor
from .transforms import normalize_bev, normalize_ting

INDEX_MAGIC = "RLIX"
INDEX_VERSION = 1


def save_index(index: MapIndex, out_dir) -> Path:
    out = Path(out_dir)
    (out / "entries").mkdir(parents=True, exist_ok=True)
    records = []
    for e in index.entries:
        stem = f"{e.id:06d}"
        write_tensor(out / "entries" / f"{stem}.nting", e.nting.data, TAG_NTING)
        write_tensor(out / "entries" / f"{stem}.bev", e.bev.grid, TAG_BEV)
        cloud_file = None
        if e.cloud is not None:
            cloud_file = f"entries/{stem}.bin"
            save_cloud(e.cloud, out / cloud_file)
        records.append({
            "id": e.id,
            "pose": {"translation": [float(v) for v in e.pose.translation],
                     "quaternion": [float(v) for v in e.pose.quaternion]},
            "nting": f"entries/{stem}.nting",
            "bev": f"entries/{stem}.bev",
            "cloud": cloud_file,
        })
    manifest = {
        "magic": INDEX_MAGIC,
        "version": INDEX_VERSION,
        "config": index.config.to_dict(),
        "config_hash": index.config.representation_hash(),
        "entries": records,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def load_index(index_dir, cfg: Optional[PipelineConfig] = None, load_clouds: bool = True) -> MapIndex:
    """Read an index written by :func:`save_index`.

    Stored tensors are float32, so both arrays are renormalized after
    loading. ``cfg`` (if given) must match the stored representation settings.

    Raises
    ------
    ConfigMismatch
        ``cfg`` differs from the build-time grid/feature/preprocess settings.
    """
    root = Path(index_dir)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(str(mpath))
    manifest = json.loads(mpath.read_text())
    if manifest.get("magic") != INDEX_MAGIC:
        raise FormatError(f"{mpath}: not a ringloc index")
    if manifest.get("version") != INDEX_VERSION:
        raise FormatError(f"{mpath}: unsupported index version {manifest.get('version')}")
    stored = config_from_dict(manifest["config"])
    if cfg is None:
        cfg = stored
    elif cfg.representation_hash() != manifest["config_hash"]:
        raise ConfigMismatch("query configuration does not match the index "
                             f"(grid {cfg.grid} vs {stored.grid}, features {cfg.features} vs {stored.features})")
    entries = []
    for rec in manifest["entries"]:
        nting, _ = read_tensor(root / rec["nting"], TAG_NTING)
        bev, _ = read_tensor(root / rec["bev"], TAG_BEV)
        cloud = load_cloud(root / rec["cloud"]) if (load_clouds and rec.get("cloud")) else None
        pose = Pose3(rec["pose"]["translation"], rec["pose"]["quaternion"])
        entries.append(MapEntry(int(rec["id"]), pose, normalize_ting(nting),
                                normalize_bev(FeatureBEV(bev, cfg.grid)), cloud))
    return MapIndex(entries, cfg)
