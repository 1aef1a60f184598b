#include "dfop/dataset_io.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "binary_io.hpp"
#include "dfop/errors.hpp"

namespace dfop {

namespace {

constexpr std::array<char, 7> kMagic = {'D', 'F', 'O', 'P', '-', 'V', '\0'};
constexpr std::uint16_t kVersion = 1;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

template <typename T>
T parse_number(const std::string& text, const std::filesystem::path& path, std::size_t line) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw FormatError(path.string() + ":" + std::to_string(line) + ": bad number '" + text + "'");
  }
  return value;
}

// Header line followed by rows of exactly header-width fields.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               const std::string& header) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != header) {
    throw FormatError(path.string() + ": expected header '" + header + "'");
  }
  const std::size_t width = split_csv_line(header).size();
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != width) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(width) + " fields");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text)) throw FormatError("cannot write " + path.string());
}

}  // namespace

void write_container(const FrameSequence& seq, const std::filesystem::path& path) {
  seq.validate();
  if (seq.fps < 1 || seq.fps > 255) throw FormatError("container fps must fit in one byte");
  const auto& first = seq.frames.front();
  detail::ByteWriter w;
  w.bytes(kMagic.data(), kMagic.size());
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(seq.frames.size()));
  w.u32(static_cast<std::uint32_t>(first.height));
  w.u32(static_cast<std::uint32_t>(first.width));
  w.u8(3);
  w.u8(static_cast<std::uint8_t>(seq.fps));
  for (const auto& f : seq.frames) w.bytes(f.pixels.data(), f.pixels.size());
  if (!detail::write_file(path, w.buffer())) throw FormatError("cannot write " + path.string());
}

FrameSequence read_container(const std::filesystem::path& path) {
  std::vector<std::uint8_t> raw;
  if (!detail::read_file(path, raw)) throw FormatError("cannot read container " + path.string());
  detail::ByteReader r(std::move(raw));
  const std::string where = path.string() + ": ";
  if (!r.need(kMagic.size() + 2 + 12 + 2)) throw FormatError(where + "truncated header");
  if (std::memcmp(r.take(kMagic.size()), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError(where + "not a DFOP frame container");
  }
  if (const auto v = r.u16(); v != kVersion) {
    throw FormatError(where + "unsupported container version " + std::to_string(v));
  }
  const std::size_t frames = r.u32(), height = r.u32(), width = r.u32();
  const std::uint8_t channels = r.u8();
  const std::uint8_t fps = r.u8();
  if (channels != 3) throw FormatError(where + "expected 3 channels");
  if (height == 0 || width == 0 || fps == 0) throw FormatError(where + "zero extent or fps");
  const std::size_t frame_bytes = height * width * 3;
  if (r.remaining() != frames * frame_bytes) {
    throw FormatError(where + "payload size does not match T*H*W*3");
  }
  FrameSequence seq;
  seq.video_id = path.stem().string();
  seq.fps = fps;
  seq.frames.reserve(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    RawFrame f(height, width);
    std::memcpy(f.pixels.data(), r.take(frame_bytes), frame_bytes);
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ostringstream os;
  os << kManifestHeader << '\n';
  for (const auto& e : entries) {
    os << e.path << ',' << e.identity_id << ',' << label_name(e.label) << ',' << e.bbox_mode << ','
       << e.bbox_path << '\n';
  }
  write_text(path, os.str());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::vector<ManifestEntry> entries;
  for (auto& row : read_csv(path, kManifestHeader)) {
    ManifestEntry e;
    e.path = row[0];
    e.identity_id = row[1];
    e.label = parse_label(row[2]);
    e.bbox_mode = row[3];
    e.bbox_path = row[4];
    if (e.path.empty() || e.identity_id.empty()) {
      throw FormatError(path.string() + ": empty path or identity_id");
    }
    if (e.bbox_mode != "center" && e.bbox_mode != "file") {
      throw FormatError(path.string() + ": bbox_mode must be 'center' or 'file'");
    }
    if (e.bbox_mode == "file" && e.bbox_path.empty()) {
      throw FormatError(path.string() + ": bbox_mode 'file' needs bbox_path");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<BBox> read_bbox_file(const std::filesystem::path& path) {
  const auto rows = read_csv(path, "frame_index,x,y,w,h");
  std::vector<BBox> boxes(rows.size());
  std::vector<bool> seen(rows.size(), false);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const auto index = parse_number<std::size_t>(row[0], path, i + 2);
    if (index >= rows.size() || seen[index]) {
      throw FormatError(path.string() + ": frame indices must cover 0.." +
                        std::to_string(rows.size() - 1) + " once");
    }
    seen[index] = true;
    boxes[index] = {parse_number<int>(row[1], path, i + 2), parse_number<int>(row[2], path, i + 2),
                    parse_number<int>(row[3], path, i + 2), parse_number<int>(row[4], path, i + 2)};
  }
  return boxes;
}

void write_bbox_file(const std::vector<BBox>& boxes, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "frame_index,x,y,w,h\n";
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    os << i << ',' << b.x << ',' << b.y << ',' << b.w << ',' << b.h << '\n';
  }
  write_text(path, os.str());
}

std::filesystem::path pulse_sidecar_path(const std::filesystem::path& container) {
  auto p = container;
  p.replace_extension(".pulse.csv");
  return p;
}

void write_pulse_file(const std::vector<double>& pulse, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "frame_index,bvp\n" << std::setprecision(17);
  for (std::size_t i = 0; i < pulse.size(); ++i) os << i << ',' << pulse[i] << '\n';
  write_text(path, os.str());
}

std::vector<double> read_pulse_file(const std::filesystem::path& path) {
  const auto rows = read_csv(path, "frame_index,bvp");
  std::vector<double> pulse(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (parse_number<std::size_t>(rows[i][0], path, i + 2) != i) {
      throw FormatError(path.string() + ": frame indices must be 0..n-1 in order");
    }
    pulse[i] = parse_number<double>(rows[i][1], path, i + 2);
  }
  return pulse;
}

FrameSequence load_clip(const ManifestEntry& entry, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  const auto container = resolve(entry.path);
  FrameSequence seq = read_container(container);
  seq.identity_id = entry.identity_id;
  seq.label = entry.label;
  if (entry.bbox_mode == "file") seq.boxes = read_bbox_file(resolve(entry.bbox_path));
  if (const auto pulse = pulse_sidecar_path(container); std::filesystem::exists(pulse)) {
    seq.pulse_truth = read_pulse_file(pulse);
  }
  seq.validate();
  return seq;
}

}  // namespace dfop
