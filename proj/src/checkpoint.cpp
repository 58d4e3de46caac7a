#include "d3/checkpoint.hpp"

#include <fstream>

#include "binio.hpp"

namespace d3::head {

void save_checkpoint(const HeadParams<double>& params, const std::string& provenance_json,
                     const std::filesystem::path& path) {
  if (params.values.size() != params.layout.size()) throw InvalidInput("parameter vector does not match layout");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write("D3CK", 4);
  binio::put<std::uint16_t>(os, kCheckpointVersion);
  binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(params.kind));
  binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(params.branches));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.dim));
  binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(params.values.size()));
  for (Eigen::Index i = 0; i < params.values.size(); ++i) binio::put<float>(os, static_cast<float>(params.values[i]));
  binio::put<std::uint64_t>(os, provenance_json.size());
  os.write(provenance_json.data(), static_cast<std::streamsize>(provenance_json.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  binio::expect_magic(is, "D3CK");
  const auto version = binio::get<std::uint16_t>(is, "version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto kind = binio::get<std::uint8_t>(is, "head kind");
  const auto branches = binio::get<std::uint8_t>(is, "branch mode");
  if (kind > static_cast<std::uint8_t>(HeadKind::transformer2)) throw FormatError("unknown head kind byte");
  if (branches > static_cast<std::uint8_t>(BranchMode::shuffled_shuffled)) throw FormatError("unknown branch mode byte");
  const auto dim = binio::get<std::uint32_t>(is, "dim");
  const auto count = binio::get<std::uint64_t>(is, "parameter count");

  Checkpoint ck;
  try {
    ck.params = HeadParams<double>(static_cast<HeadKind>(kind), static_cast<BranchMode>(branches),
                                   static_cast<int>(dim));
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("invalid checkpoint header: ") + e.what());
  }
  if (count != static_cast<std::uint64_t>(ck.params.values.size()))
    throw FormatError("parameter count " + std::to_string(count) + " does not match layout size " +
                      std::to_string(ck.params.values.size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    const float v = binio::get<float>(is, "weights");
    if (!std::isfinite(v)) throw FormatError("non-finite weight at index " + std::to_string(i));
    ck.params.values[static_cast<Eigen::Index>(i)] = v;
  }
  const auto len = binio::get<std::uint64_t>(is, "provenance length");
  if (len > (1ull << 26)) throw FormatError("implausible provenance length");
  ck.provenance_json.resize(len);
  if (len && !is.read(ck.provenance_json.data(), static_cast<std::streamsize>(len)))
    throw FormatError("truncated file while reading provenance");
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing data after provenance");
  return ck;
}

HeadParams<double> round_to_storage(const HeadParams<double>& params) {
  return params.cast<float>().cast<double>();
}

}  // namespace d3::head
