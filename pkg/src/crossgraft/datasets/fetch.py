"""Download raw benchmark archives with digest verification.

This is the only network-touching code in the package. Every archive entry
carries the md5 published by its distributor; a mismatched digest removes
the file and raises. Derived datasets are never downloaded — they are
synthesized locally (see synth).
"""

from __future__ import annotations

import hashlib
import logging
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigurationError, IngestionError, IntegrityError
from .loaders import BASE_DATASETS, raw_dir

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Archive:
    filename: str
    urls: tuple[str, ...]
    md5: str


_MNIST_MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)
_FASHION_BASE = "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/"
_USPS_BASE = "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/multiclass/"


def _mirrored(base_urls, filename, md5):
    return Archive(filename, tuple(u + filename for u in base_urls), md5)


ARCHIVES: dict[str, tuple[Archive, ...]] = {
    "mnist": (
        _mirrored(_MNIST_MIRRORS, "train-images-idx3-ubyte.gz", "f68b3c2dcbeaaa9fbdd348bbdeb94873"),
        _mirrored(_MNIST_MIRRORS, "train-labels-idx1-ubyte.gz", "d53e105ee54ea40749a09fcbcd1e9432"),
        _mirrored(_MNIST_MIRRORS, "t10k-images-idx3-ubyte.gz", "9fb629c4189551a2d022fa330f9573f3"),
        _mirrored(_MNIST_MIRRORS, "t10k-labels-idx1-ubyte.gz", "ec29112dd5afa0611ce80d1b7f02629c"),
    ),
    "fashion": (
        _mirrored((_FASHION_BASE,), "train-images-idx3-ubyte.gz", "8d4fb7e6c68d591d4c3dfef9ec88bf0d"),
        _mirrored((_FASHION_BASE,), "train-labels-idx1-ubyte.gz", "25c81989df183df01b3e8a0aad5dffbe"),
        _mirrored((_FASHION_BASE,), "t10k-images-idx3-ubyte.gz", "bef4ecab320f06d8554ea6380940ec79"),
        _mirrored((_FASHION_BASE,), "t10k-labels-idx1-ubyte.gz", "bb300cfdad3c16e7a12a480ee83cd310"),
    ),
    "usps": (
        _mirrored((_USPS_BASE,), "usps.bz2", "ec16c51db3855ca6c91edd34d0e9b197"),
        _mirrored((_USPS_BASE,), "usps.t.bz2", "8ea070ee2aca1ac39742fdd1ef5ed118"),
    ),
}


def _md5(path: Path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fetch_dataset(name: str, root: str | Path, force: bool = False) -> list[Path]:
    """Download all raw archives for one base dataset into <root>/<name>/raw/."""
    if name not in ARCHIVES:
        raise ConfigurationError(
            f"no downloadable archives for {name!r}; fetchable datasets: {BASE_DATASETS}"
        )
    dest_dir = raw_dir(root, name)
    dest_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for archive in ARCHIVES[name]:
        dest = dest_dir / archive.filename
        if dest.exists() and not force:
            if _md5(dest) == archive.md5:
                log.info("%s already present, skipping", dest)
                written.append(dest)
                continue
            log.warning("%s exists but fails digest check, re-downloading", dest)
        last_error: Exception | None = None
        for url in archive.urls:
            try:
                log.info("downloading %s", url)
                with urllib.request.urlopen(url, timeout=60) as resp:
                    data = resp.read()
                break
            except (urllib.error.URLError, OSError) as e:
                last_error = e
                log.warning("download failed from %s: %s", url, e)
        else:
            raise IngestionError(f"all mirrors failed for {archive.filename}: {last_error}")
        tmp = dest.with_suffix(dest.suffix + ".part")
        tmp.write_bytes(data)
        if _md5(tmp) != archive.md5:
            tmp.unlink()
            raise IntegrityError(f"digest mismatch for downloaded {archive.filename}")
        tmp.replace(dest)
        written.append(dest)
    return written
