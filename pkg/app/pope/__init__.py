from .tree import EncryptedBlock, PopeNode, PopeTree, setup
from .service import PopeService


__all__ = ["EncryptedBlock", "PopeNode", "PopeTree", "PopeService", "setup"]
