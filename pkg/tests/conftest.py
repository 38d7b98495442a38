from __future__ import annotations

import random
import sys
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from seclog.controller import EcConfig, EmbeddedController, StartLogging, ec_connect  # noqa: E402
from seclog.lmu_format import create_image, serialize_image  # noqa: E402
from seclog.porting import PortingInputs  # noqa: E402
from seclog.records import LogRecord  # noqa: E402
from seclog.secmod import SvdCredential  # noqa: E402
from seclog.simnet.med import MedProfile, med_sample  # noqa: E402


@dataclass
class Session:
    ec: EmbeddedController
    credential: SvdCredential

    @property
    def master(self) -> bytes:
        return self.credential.master

    @property
    def data(self) -> bytes:
        return serialize_image(self.ec.image)

    def inputs(self, data: bytes | None = None, **kw) -> PortingInputs:
        return PortingInputs(self.data if data is None else data, self.credential, **kw)


def new_session(*, capacity: int = 64, payload_max: int = 64, interval: int = 8, seed: int = 0) -> Session:
    rng = random.Random(seed)
    lmu_id, ec_id, med_id, svd_id = (rng.randbytes(16) for _ in range(4))
    master = rng.randbytes(32)
    image = create_image(lmu_id=lmu_id, ec_id=ec_id, med_id=med_id, svd_id=svd_id,
                         capacity_blocks=capacity, record_payload_max=payload_max)
    ec = ec_connect(EcConfig(ec_id, interval), master, image, rng)
    return Session(ec, SvdCredential(svd_id=svd_id, lmu_id=lmu_id, master=master))


def log_samples(session: Session, n: int, start: int = 0, profile: MedProfile | None = None) -> None:
    profile = profile or MedProfile(current_noise_ma=40)
    rng = random.Random(start)
    ec = session.ec
    if ec.sample_interval == 0:
        ec.handle_command(StartLogging(1))
    for t in range(start, start + n):
        ec.tick(t)
        ec.on_sample(LogRecord.of(t, med_sample(profile, t, rng)))


def closed_session(n_samples: int, **kw) -> Session:
    s = new_session(**kw)
    log_samples(s, n_samples)
    s.ec.close(n_samples)
    return s


@pytest.fixture
def rng():
    return random.Random(1234)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
