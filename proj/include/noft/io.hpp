#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "noft/noft.hpp"
#include "noft/verify.hpp"

namespace noft::io {

// Noise file, all fields little-endian:
//   "NOFT" | u16 version | u16 rank | u32 dims[rank] | f32 payload | u32 crc32(payload)
inline constexpr std::uint16_t kNoiseVersion = 1;

// Checkpoint file, little-endian:
//   "NOFC" | u16 version | u16 rank | u32 dims[rank] | u32 n_iters | u8 restandardize
//   | u32 kernel_size | u32 lambda_downsample | f64 lambda_min | u32 block_count
//   | u32 crc32(header bytes so far)
//   then per block: u16 name_len | name | u16 rank | u32 dims[rank] | f64 payload
//   | u32 crc32(payload)
inline constexpr std::uint16_t kCheckpointVersion = 1;

using Bytes = std::vector<std::uint8_t>;

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

Bytes encode_noise(const NoiseTensor& t);
/// Throws BadMagic, VersionMismatch, CrcMismatch, Truncated or Shape errors.
NoiseTensor decode_noise(std::span<const std::uint8_t> bytes);

Bytes encode_checkpoint(const NoftModel& model);
NoftModel decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_noise(const std::filesystem::path& path, const NoiseTensor& t);
NoiseTensor read_noise(const std::filesystem::path& path);

void write_checkpoint(const std::filesystem::path& path, const NoftModel& model);
NoftModel read_checkpoint(const std::filesystem::path& path);
/// Also rejects checkpoints bound to a different noise shape.
NoftModel read_checkpoint(const std::filesystem::path& path, const Shape& expected);

enum class FileKind { Noise, Checkpoint, Unknown };
FileKind sniff(std::span<const std::uint8_t> bytes);

/// `key = value` lines, '#' comments. Unset keys keep TrainConfig defaults.
TrainConfig parse_config(const std::string& text);
TrainConfig read_config(const std::filesystem::path& path);

/// One tab-separated row per step; no timing data, so reruns are byte-identical.
std::string format_train_report(const TrainReport& report);
void write_train_report(const std::filesystem::path& path, const TrainReport& report);

std::string sweep_to_json(const verify::TradeoffReport& report);
void write_sweep_report(const std::filesystem::path& path, const verify::TradeoffReport& report);

Bytes read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file, then renames over `path`.
void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void atomic_write(const std::filesystem::path& path, const std::string& text);

}  // namespace noft::io
