#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dfop/preprocessing.hpp"

namespace dfop {

// Frame container: "DFOP-V\0", u16 version, u32 T/H/W, u8 channels (3),
// u8 fps, then T frames of H*W*3 bytes.
void write_container(const FrameSequence& seq, const std::filesystem::path& path);
// Returns frames and fps; video_id is the file stem. Throws FormatError.
FrameSequence read_container(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;
  std::string identity_id;
  Label label = Label::real;
  std::string bbox_mode = "center";  // "center" or "file"
  std::string bbox_path;
};

inline constexpr const char* kManifestHeader = "path,identity_id,label,bbox_mode,bbox_path";

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// CSV `frame_index,x,y,w,h`; indices must cover 0..n-1 exactly once.
std::vector<BBox> read_bbox_file(const std::filesystem::path& path);
void write_bbox_file(const std::vector<BBox>& boxes, const std::filesystem::path& path);

// Per-frame pulse ground truth stored next to a container as
// `<stem>.pulse.csv` with header `frame_index,bvp`.
std::filesystem::path pulse_sidecar_path(const std::filesystem::path& container);
void write_pulse_file(const std::vector<double>& pulse, const std::filesystem::path& path);
std::vector<double> read_pulse_file(const std::filesystem::path& path);

// Loads the container, boxes and (when present) pulse sidecar of one entry.
// Relative paths resolve against `base_dir`.
FrameSequence load_clip(const ManifestEntry& entry, const std::filesystem::path& base_dir);

}  // namespace dfop
