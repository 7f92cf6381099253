#pragma once

#include <string>

#include "exdrop/encoder.hpp"

namespace exdrop {

// Binary weight snapshot. The file is self-describing: every matrix is
// stored under its canonical name with explicit dimensions, and the whole
// stream is sealed with a checksum so a truncated or bit-flipped file is
// rejected instead of silently loading garbage.
void save_checkpoint(const EncoderParams& params, const std::string& path);

// Rebuilds the full weight set from a file written by save_checkpoint.
// Throws std::runtime_error on a bad magic, unknown version, checksum
// mismatch, or any missing/unexpected entry.
EncoderParams load_checkpoint(const std::string& path);

}  // namespace exdrop
