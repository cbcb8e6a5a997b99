"""Simulated confidential-computing enclaves and remote attestation.

Models the lifecycle Built -> Running -> Attested -> Terminated (any state
may terminate) with a certifier that registers per-node signing keys, issues
single-use nonces, and verifies HMAC-SHA256 attestation tags over
(enclave_id, node_id, measurement, nonce). No real TEE is involved; the
point is that the scheduler provably refuses to run confidential workflows
on nodes that cannot produce a verifiable document.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .fleet import VecNode, Workflow

_CERTIFIER_STREAM = 5


class EnclaveState(Enum):
    BUILT = "built"
    RUNNING = "running"
    ATTESTED = "attested"
    TERMINATED = "terminated"


# Legal (from, to) transitions; terminate is reachable from every state.
_LEGAL = {
    (EnclaveState.BUILT, EnclaveState.RUNNING),
    (EnclaveState.RUNNING, EnclaveState.ATTESTED),
    (EnclaveState.BUILT, EnclaveState.TERMINATED),
    (EnclaveState.RUNNING, EnclaveState.TERMINATED),
    (EnclaveState.ATTESTED, EnclaveState.TERMINATED),
    (EnclaveState.TERMINATED, EnclaveState.TERMINATED),  # idempotent terminate
}


class EnclaveError(Exception):
    """Base class for enclave failures."""


class IllegalTransitionError(EnclaveError):
    pass


class AttestationError(EnclaveError):
    pass


@dataclass(frozen=True)
class EnclaveImage:
    """Sealed image for one workflow; the measurement digests the workflow
    descriptor, so any descriptor change changes the measurement."""

    workflow_id: int
    measurement: str
    sealed: bool = True


@dataclass(frozen=True)
class AttestationDocument:
    enclave_id: str
    node_id: int
    measurement: str
    nonce: str
    tag: str


def build_enclave(workflow: Workflow) -> EnclaveImage:
    if not workflow.cc_required:
        raise EnclaveError(f"workflow {workflow.workflow_id} does not request confidential execution")
    digest = hashlib.sha256(workflow.descriptor().encode()).hexdigest()
    return EnclaveImage(workflow_id=workflow.workflow_id, measurement=digest)


class Enclave:
    """A live enclave instance; holds sealed state until terminated."""

    def __init__(self, enclave_id: str, node_id: int, image: EnclaveImage):
        self.enclave_id = enclave_id
        self.node_id = node_id
        self.image = image
        self.state = EnclaveState.BUILT
        self._payload: Optional[dict] = {"workflow_id": image.workflow_id}

    def _transition(self, to: EnclaveState) -> None:
        if (self.state, to) not in _LEGAL:
            raise IllegalTransitionError(f"{self.state.value} -> {to.value} is not a legal enclave transition")
        self.state = to

    def start(self) -> None:
        self._transition(EnclaveState.RUNNING)

    def mark_attested(self) -> None:
        self._transition(EnclaveState.ATTESTED)

    def terminate(self) -> None:
        """Erase enclave state; legal from any state and idempotent."""
        self._transition(EnclaveState.TERMINATED)
        self._payload = None

    def payload(self) -> dict:
        if self._payload is None:
            raise EnclaveError(f"enclave {self.enclave_id} is terminated; its state was erased")
        return self._payload


def _tag_message(enclave_id: str, node_id: int, measurement: str, nonce: str) -> bytes:
    return "|".join([enclave_id, str(node_id), measurement, nonce]).encode()


def compute_tag(key: bytes, enclave_id: str, node_id: int, measurement: str, nonce: str) -> str:
    return hmac.new(key, _tag_message(enclave_id, node_id, measurement, nonce), hashlib.sha256).hexdigest()


class Certifier:
    """Registry of node signing keys plus nonce issuance and verification.

    Keys are generated from a seeded stream at registration, which stands in
    for a provisioning ceremony; nonces are single-use and must have been
    issued by this certifier.
    """

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng([seed, _CERTIFIER_STREAM])
        self._keys: dict[int, bytes] = {}
        self._issued: set[str] = set()
        self._consumed: set[str] = set()
        self._id_counter = 0

    def register_node(self, node_id: int) -> bytes:
        if node_id not in self._keys:
            self._keys[node_id] = self._rng.bytes(32)
        return self._keys[node_id]

    def is_registered(self, node_id: int) -> bool:
        return node_id in self._keys

    def node_key(self, node_id: int) -> bytes:
        if node_id not in self._keys:
            raise AttestationError(f"node {node_id} holds no registered attestation key")
        return self._keys[node_id]

    def issue_nonce(self) -> str:
        nonce = self._rng.bytes(16).hex()
        self._issued.add(nonce)
        return nonce

    def next_enclave_id(self, workflow_id: int, node_id: int) -> str:
        self._id_counter += 1
        return f"enc-{workflow_id}-{node_id}-{self._id_counter}"

    def verify(self, document: AttestationDocument, expected_measurement: str) -> None:
        """Raise AttestationError unless the document is genuine and fresh."""
        if document.node_id not in self._keys:
            raise AttestationError(f"node {document.node_id} is not registered with the certifier")
        if document.nonce not in self._issued:
            raise AttestationError("nonce was not issued by this certifier")
        if document.nonce in self._consumed:
            raise AttestationError("nonce already consumed; attestation documents are single-use")
        expected_tag = compute_tag(
            self._keys[document.node_id],
            document.enclave_id,
            document.node_id,
            document.measurement,
            document.nonce,
        )
        if not hmac.compare_digest(expected_tag, document.tag):
            raise AttestationError("attestation tag does not verify under the node's key")
        if document.measurement != expected_measurement:
            raise AttestationError("measurement mismatch: enclave contents differ from the built image")
        self._consumed.add(document.nonce)


def launch_and_attest(
    image: EnclaveImage, node: VecNode, certifier: Certifier
) -> tuple[Enclave, AttestationDocument]:
    """Instantiate the image on a node and verify its attestation document.

    The node signs (enclave_id, node_id, measurement, nonce) with its
    registered key. On any verification failure the enclave is terminated
    before the error propagates.
    """
    if not node.cc_capable:
        raise EnclaveError(f"node {node.node_id} is not confidential-computing capable")
    key = certifier.node_key(node.node_id)  # unregistered -> AttestationError
    enclave = Enclave(certifier.next_enclave_id(image.workflow_id, node.node_id), node.node_id, image)
    enclave.start()
    nonce = certifier.issue_nonce()
    document = AttestationDocument(
        enclave_id=enclave.enclave_id,
        node_id=node.node_id,
        measurement=image.measurement,
        nonce=nonce,
        tag=compute_tag(key, enclave.enclave_id, node.node_id, image.measurement, nonce),
    )
    try:
        certifier.verify(document, expected_measurement=image.measurement)
    except AttestationError:
        enclave.terminate()
        raise
    enclave.mark_attested()
    return enclave, document


def terminate_enclave(enclave: Enclave) -> None:
    enclave.terminate()
