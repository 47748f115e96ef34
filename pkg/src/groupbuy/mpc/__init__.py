from .dealer import Counts, Dealer, PartyStock, PreprocessingExhausted, load_bundle, save_bundle
from .engine import Engine, Fault, Party, ProtocolAbort, Shared
from .network import Network, TransportError
