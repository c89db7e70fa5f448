from timelinegpt.codec.tokens import (TokenClass, TimeTriple, att_token, intra_att_token, decompose_interval,
                                      token_class, token_value)
from timelinegpt.codec.records import (CodecConfig, ClinicalEvent, Visit, PatientRecord, records_from_tables,
                                       tables_from_records)
from timelinegpt.codec.sequence import TokenSequence, read_sequences, write_sequences
from timelinegpt.codec.encoder import encode_patient, encode_patients
from timelinegpt.codec.decoder import DecodeError, DecodeReport, decode_sequence, decode_sequences, validate_sequence
from timelinegpt.codec.vocab import ExpansionReport, Vocabulary, build_vocabulary, expand_vocabulary
