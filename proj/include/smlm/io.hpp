#pragma once

#include "smlm/camera.hpp"
#include "smlm/localization.hpp"
#include "smlm/loss.hpp"
#include "smlm/psf.hpp"
#include "smlm/simulator.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace smlm {

enum class IoErrc
{
  Open,
  Write,
  BadMagic,
  BadVersion,
  TruncatedHeader,
  TruncatedPayload,
  DimensionOverflow,
  TrailingData,
  MissingColumn,
  BadCell,
  BadJson,
  BadConfig,
};

/// Stable snake_case identifier, e.g. "bad_magic".
std::string_view errc_name(IoErrc code);

class IoError : public std::runtime_error
{
public:
  IoError(IoErrc code, const std::string& message);
  IoErrc code() const { return code_; }

private:
  IoErrc code_;
};

// --- SMLF v1 frame stacks -------------------------------------------------
//
// "SMLF", u32 version = 1, u32 width, u32 height, u32 n_frames,
// f64 pixel_size_nm, then f32 pixels (row-major, frames consecutive).
// All values little-endian.

void write_smlf(const FrameStack& stack, const std::string& path);
FrameStack read_smlf(const std::string& path);
void write_smlf(const FrameStack& stack, std::ostream& out);
FrameStack read_smlf(std::istream& in);

/// Shortest decimal that parses back to the same double ("inf", "-inf", "nan"
/// for non-finite values).
std::string format_number(double v);

// --- Localization tables (CSV) --------------------------------------------
//
// Header frame,x_nm,y_nm,z_nm,photons,prob,sig_x,sig_y,sig_z. Numbers use the
// shortest decimal that round-trips; infinities are written as inf/-inf.
// The ground-truth variant frame,id,x_nm,y_nm,z_nm,photons is read with
// prob = 1 and sigmas = 0. Columns may appear in any order; an id column is
// optional in both forms.

void write_table(const LocalizationTable& table, const std::string& path);
void write_table(const LocalizationTable& table, std::ostream& out);
void write_truth_table(const LocalizationTable& table, const std::string& path);
void write_truth_table(const LocalizationTable& table, std::ostream& out);
LocalizationTable read_table(const std::string& path);
/// `source` names the input in error messages.
LocalizationTable read_table(std::istream& in, const std::string& source = "<stream>");

// --- JSON documents -------------------------------------------------------

using Json = nlohmann::ordered_json;

/// Parses a file; throws IoError(BadJson) with the parser message.
Json load_json(const std::string& path);
void save_json(const Json& doc, const std::string& path);

/// {"kind": "2d"|"as"|"dh", "params": {...}, "pixmap": {"dims": [nx, ny, nz],
/// "pixel_size_xy", "z_spacing", "origin": [x, y, z], "data_file"}}.
/// Relative data files resolve against `base_dir`.
PsfModel psf_from_json(const Json& doc, const std::filesystem::path& base_dir);
/// Writes the pixel map (if any) to `data_file`, stored relative to `base_dir`.
Json psf_to_json(const PsfModel& psf, const std::filesystem::path& base_dir, const std::string& data_file);
PsfModel read_psf(const std::string& path);
/// The pixel map goes to "<stem>.pixmap.f32" next to `path`.
void write_psf(const PsfModel& psf, const std::string& path);

/// Camera description. For sCMOS the variance map is either uniform
/// ("read_var": counts^2, sized on use) or loaded from a raw f32 file
/// ("var_map": {"dims": [w, h], "data_file"}).
struct CameraSpec
{
  Camera camera = CameraEmccd{};
  std::optional<double> uniform_var;

  /// The camera with its variance map sized for a width x height field.
  Camera resolve(int width, int height) const;
};

CameraSpec camera_from_json(const Json& doc, const std::filesystem::path& base_dir);
/// sCMOS cameras with a non-uniform map are written with their map in
/// `data_file` (relative to `base_dir`).
Json camera_to_json(const CameraSpec& spec, const std::filesystem::path& base_dir = {},
                    const std::string& data_file = "camera_var.f32");
CameraSpec read_camera(const std::string& path);

// --- Raw little-endian f32 arrays -----------------------------------------

std::vector<double> read_f32(const std::string& path, std::size_t count);
void write_f32(const std::vector<double>& values, const std::string& path);

// --- Output maps ----------------------------------------------------------
//
// One SMLF plane per channel and frame (frame-major, channel order p, alpha,
// dx, dy, dz, sig_alpha, sig_x, sig_y, sig_z) plus a "<path>.json" sidecar
// naming the channels. Values are stored as f32.

void write_output_maps(const std::vector<OutputMaps>& frames, const std::string& path);
std::vector<OutputMaps> read_output_maps(const std::string& path);

} // namespace smlm
