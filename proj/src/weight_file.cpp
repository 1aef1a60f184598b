#include <array>
#include <cmath>

#include "binary_io.hpp"
#include "dfop/can_model.hpp"

namespace dfop {

namespace {

constexpr std::array<char, 7> kMagic = {'D', 'F', 'O', 'P', '-', 'W', '\0'};
constexpr std::uint16_t kVersion = 1;

using Kind = WeightFileError::Kind;

}  // namespace

void save_weights(const CanWeights& weights, const std::filesystem::path& path) {
  const CanConfig& c = weights.config;
  detail::ByteWriter w;
  w.bytes(kMagic.data(), kMagic.size());
  w.u16(kVersion);
  for (std::uint32_t field : {c.input_side, c.input_channels, c.filters1, c.filters2,
                              c.kernel_size, c.pool_window, c.fc_size,
                              static_cast<std::uint32_t>(c.head)}) {
    w.u32(field);
  }
  for (const auto& p : weights.params) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.text(p.name);
    w.u8(static_cast<std::uint8_t>(p.value.rank()));
    for (auto e : p.value.shape()) w.u32(static_cast<std::uint32_t>(e));
    w.u8(p.frozen ? 1 : 0);
    for (double v : p.value.values()) w.f32(static_cast<float>(v));
  }
  if (!detail::write_file(path, w.buffer())) {
    throw WeightFileError(Kind::io, "cannot write weight file " + path.string());
  }
}

CanWeights load_weights(const std::filesystem::path& path) {
  std::vector<std::uint8_t> raw;
  if (!detail::read_file(path, raw)) {
    throw WeightFileError(Kind::io, "cannot read weight file " + path.string());
  }
  detail::ByteReader r(std::move(raw));
  const std::string where = path.string() + ": ";
  auto require = [&](std::size_t n, const std::string& what, const std::string& param = {}) {
    if (!r.need(n)) throw WeightFileError(Kind::truncated, where + "truncated in " + what, param);
  };

  require(kMagic.size() + 2, "header");
  if (std::memcmp(r.take(kMagic.size()), kMagic.data(), kMagic.size()) != 0) {
    throw WeightFileError(Kind::bad_magic, where + "not a DFOP weight file");
  }
  if (const auto version = r.u16(); version != kVersion) {
    throw WeightFileError(Kind::bad_version,
                          where + "unsupported version " + std::to_string(version));
  }

  require(8 * 4, "config");
  CanConfig config;
  config.input_side = r.u32();
  config.input_channels = r.u32();
  config.filters1 = r.u32();
  config.filters2 = r.u32();
  config.kernel_size = r.u32();
  config.pool_window = r.u32();
  config.fc_size = r.u32();
  const std::uint32_t head = r.u32();
  if (head > 1) throw WeightFileError(Kind::bad_config, where + "unknown head kind");
  config.head = static_cast<HeadKind>(head);
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw WeightFileError(Kind::bad_config, where + e.what());
  }

  CanWeights weights;
  weights.config = config;
  const auto shapes = CanWeights::slot_shapes(config);
  const auto& names = CanWeights::slot_names();
  for (std::size_t s = 0; s < CanWeights::kSlotCount; ++s) {
    const std::string& expected = names[s];
    require(2, "parameter name", expected);
    const std::size_t name_len = r.u16();
    require(name_len, "parameter name", expected);
    const auto* name_bytes = reinterpret_cast<const char*>(r.take(name_len));
    std::string name(name_bytes, name_len);
    if (name != expected) {
      throw WeightFileError(Kind::unexpected_parameter,
                            where + "expected parameter '" + expected + "', found '" + name + "'",
                            name);
    }
    require(1, "rank", name);
    const std::size_t rank = r.u8();
    require(rank * 4 + 1, "extents", name);
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    if (shape != shapes[s]) {
      throw WeightFileError(Kind::shape_mismatch,
                            where + "parameter '" + name + "' declares shape " +
                                shape_string(shape) + ", config requires " +
                                shape_string(shapes[s]),
                            name);
    }
    const std::uint8_t frozen = r.u8();
    if (frozen > 1) throw WeightFileError(Kind::bad_config, where + "bad frozen flag", name);
    const std::size_t count = shape_volume(shape);
    require(count * 4, "payload", name);
    std::vector<double> values(count);
    for (auto& v : values) {
      v = static_cast<double>(r.f32());
      if (!std::isfinite(v)) {
        throw WeightFileError(Kind::non_finite, where + "non-finite value in '" + name + "'", name);
      }
    }
    Parameter p(name, Tensor(shape, std::move(values)));
    p.frozen = frozen == 1;
    weights.params.push_back(std::move(p));
  }
  if (r.remaining() != 0) {
    throw WeightFileError(Kind::trailing_data,
                          where + std::to_string(r.remaining()) + " unexpected trailing bytes");
  }
  return weights;
}

}  // namespace dfop
