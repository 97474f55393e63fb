#include "smlm/io.hpp"

#include "json_fields.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace smlm {

namespace fs = std::filesystem;
using detail::Fields;

std::string_view errc_name(IoErrc code)
{
  switch (code) {
  case IoErrc::Open: return "open_failed";
  case IoErrc::Write: return "write_failed";
  case IoErrc::BadMagic: return "bad_magic";
  case IoErrc::BadVersion: return "bad_version";
  case IoErrc::TruncatedHeader: return "truncated_header";
  case IoErrc::TruncatedPayload: return "truncated_payload";
  case IoErrc::DimensionOverflow: return "dimension_overflow";
  case IoErrc::TrailingData: return "trailing_data";
  case IoErrc::MissingColumn: return "missing_column";
  case IoErrc::BadCell: return "bad_cell";
  case IoErrc::BadJson: return "bad_json";
  case IoErrc::BadConfig: return "bad_config";
  }
  return "unknown";
}

IoError::IoError(IoErrc code, const std::string& message)
  : std::runtime_error(message), code_(code)
{
}

namespace {

constexpr std::array<char, 4> kMagic = {'S', 'M', 'L', 'F'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 * 4 + 8;

template <typename U>
void put_le(std::string& buf, U v)
{
  for (std::size_t i = 0; i < sizeof(U); ++i)
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char* p)
{
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::ifstream open_in(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError(IoErrc::Open, "cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError(IoErrc::Open, "cannot open '" + path + "' for writing");
  return out;
}

void finish_write(std::ostream& out, const std::string& path)
{
  out.flush();
  if (!out)
    throw IoError(IoErrc::Write, "write to '" + path + "' failed");
}

// --- CSV -------------------------------------------------------------------

constexpr std::array<const char*, 9> kTableColumns = {"frame", "x_nm",   "y_nm",   "z_nm", "photons",
                                                      "prob",  "sig_x", "sig_y", "sig_z"};

std::vector<std::string_view> split_csv(std::string_view line)
{
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_cell(std::string_view cell, const std::string& source, std::size_t line, const std::string& column)
{
  cell = trim(cell);
  T v{};
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && cell.front() == '+')
    ++first;
  const auto res = std::from_chars(first, last, v);
  if (cell.empty() || res.ec != std::errc{} || res.ptr != last)
    throw IoError(IoErrc::BadCell, source + ": line " + std::to_string(line) + ", column '" + column +
                                       "': cannot parse '" + std::string(cell) + "'");
  return v;
}

// --- JSON helpers ----------------------------------------------------------

[[noreturn]] void rethrow_config(const std::string& where, const std::exception& e)
{
  throw IoError(IoErrc::BadConfig, where + ": " + e.what());
}

fs::path resolve_path(const fs::path& base, const std::string& file)
{
  const fs::path p(file);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::array<const char*, kShapeParams> param_names(PsfKind kind)
{
  switch (kind) {
  case PsfKind::TwoD: return {"a1", "a2", "b1", "b2"};
  case PsfKind::Astigmatic: return {"a", "b_x", "b_y", "c"};
  case PsfKind::DoubleHelix: return {"a", "b", "c", "d"};
  }
  return {};
}

ShapeVector default_shape(PsfKind kind)
{
  switch (kind) {
  case PsfKind::TwoD: return shape_vector(Psf2DParams{});
  case PsfKind::Astigmatic: return shape_vector(PsfAsParams{});
  case PsfKind::DoubleHelix: return shape_vector(PsfDhParams{});
  }
  return {};
}

std::array<int, 3> read_dims(Fields& f, std::size_t n)
{
  const Json& d = f.raw("dims");
  if (!d.is_array() || d.size() != n)
    f.fail("'dims' must be an array of " + std::to_string(n) + " positive integers");
  std::array<int, 3> out{1, 1, 1};
  for (std::size_t i = 0; i < n; ++i) {
    if (!d[i].is_number_integer() || d[i].get<long long>() < 1 || d[i].get<long long>() > (1 << 20))
      f.fail("'dims' must be an array of " + std::to_string(n) + " positive integers");
    out[i] = d[i].get<int>();
  }
  return out;
}

} // namespace

std::string format_number(double v)
{
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

// --- SMLF --------------------------------------------------------------------

void write_smlf(const FrameStack& stack, std::ostream& out)
{
  stack.validate();
  std::string buf;
  buf.reserve(kHeaderBytes);
  buf.append(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(buf, kVersion);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(stack.width));
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(stack.height));
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(stack.n_frames()));
  put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(stack.pixel_size));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  for (const auto& f : stack.frames) {
    buf.clear();
    buf.reserve(f.size() * 4);
    for (float v : f.data())
      put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(v));
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

void write_smlf(const FrameStack& stack, const std::string& path)
{
  auto out = open_out(path);
  write_smlf(stack, out);
  finish_write(out, path);
}

FrameStack read_smlf(std::istream& in)
{
  std::array<unsigned char, kHeaderBytes> h{};
  in.read(reinterpret_cast<char*>(h.data()), static_cast<std::streamsize>(h.size()));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got >= 4 && std::memcmp(h.data(), kMagic.data(), 4) != 0)
    throw IoError(IoErrc::BadMagic, "SMLF: bad magic");
  if (got < kHeaderBytes)
    throw IoError(IoErrc::TruncatedHeader, "SMLF: truncated header");
  const auto version = get_le<std::uint32_t>(h.data() + 4);
  if (version != kVersion)
    throw IoError(IoErrc::BadVersion, "SMLF: unsupported version " + std::to_string(version));
  const auto w = get_le<std::uint32_t>(h.data() + 8);
  const auto hh = get_le<std::uint32_t>(h.data() + 12);
  const auto n = get_le<std::uint32_t>(h.data() + 16);
  const double pixel_size = std::bit_cast<double>(get_le<std::uint64_t>(h.data() + 20));

  constexpr std::uint64_t kIntMax = static_cast<std::uint64_t>(std::numeric_limits<int>::max());
  const std::uint64_t plane = static_cast<std::uint64_t>(w) * hh;
  if (w > kIntMax || hh > kIntMax || n > kIntMax || plane > kIntMax ||
      (n > 0 && plane > std::numeric_limits<std::uint64_t>::max() / 4 / n))
    throw IoError(IoErrc::DimensionOverflow, "SMLF: dimensions " + std::to_string(w) + "x" + std::to_string(hh) +
                                                 "x" + std::to_string(n) + " overflow");
  const std::uint64_t payload = plane * n * 4;

  // Reject short files before allocating when the stream is seekable.
  const auto here = in.tellg();
  if (here != std::streampos(-1)) {
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    in.seekg(here);
    if (end != std::streampos(-1)) {
      const auto remaining = static_cast<std::uint64_t>(end - here);
      if (remaining < payload)
        throw IoError(IoErrc::TruncatedPayload, "SMLF: truncated payload");
      if (remaining > payload)
        throw IoError(IoErrc::TrailingData, "SMLF: unexpected data after the last frame");
    }
  }

  FrameStack stack;
  stack.width = static_cast<int>(w);
  stack.height = static_cast<int>(hh);
  stack.pixel_size = pixel_size;
  stack.frames.reserve(n);
  std::vector<unsigned char> buf(static_cast<std::size_t>(plane) * 4);
  for (std::uint32_t k = 0; k < n; ++k) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size())
      throw IoError(IoErrc::TruncatedPayload, "SMLF: truncated payload");
    ImageF f(stack.width, stack.height);
    for (std::size_t i = 0; i < f.size(); ++i)
      f.data()[i] = std::bit_cast<float>(get_le<std::uint32_t>(buf.data() + 4 * i));
    stack.frames.push_back(std::move(f));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw IoError(IoErrc::TrailingData, "SMLF: unexpected data after the last frame");
  return stack;
}

FrameStack read_smlf(const std::string& path)
{
  auto in = open_in(path);
  return read_smlf(in);
}

// --- Tables ------------------------------------------------------------------

void write_table(const LocalizationTable& table, std::ostream& out)
{
  for (std::size_t c = 0; c < kTableColumns.size(); ++c)
    out << (c ? "," : "") << kTableColumns[c];
  out << '\n';
  for (const auto& r : table)
    out << r.frame << ',' << format_number(r.x) << ',' << format_number(r.y) << ',' << format_number(r.z) << ','
        << format_number(r.photons) << ',' << format_number(r.prob) << ',' << format_number(r.sig_x) << ','
        << format_number(r.sig_y) << ',' << format_number(r.sig_z) << '\n';
}

void write_table(const LocalizationTable& table, const std::string& path)
{
  auto out = open_out(path);
  write_table(table, out);
  finish_write(out, path);
}

void write_truth_table(const LocalizationTable& table, std::ostream& out)
{
  out << "frame,id,x_nm,y_nm,z_nm,photons\n";
  for (const auto& r : table)
    out << r.frame << ',' << r.id << ',' << format_number(r.x) << ',' << format_number(r.y) << ','
        << format_number(r.z) << ',' << format_number(r.photons) << '\n';
}

void write_truth_table(const LocalizationTable& table, const std::string& path)
{
  auto out = open_out(path);
  write_truth_table(table, out);
  finish_write(out, path);
}

LocalizationTable read_table(std::istream& in, const std::string& source)
{
  std::string line;
  if (!std::getline(in, line))
    throw IoError(IoErrc::MissingColumn, source + ": empty file, no header");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
    line.erase(0, 3);

  std::map<std::string, std::size_t> col;
  const auto header = split_csv(line);
  for (std::size_t i = 0; i < header.size(); ++i)
    col[std::string(trim(header[i]))] = i;

  auto need = [&](const char* name) {
    if (!col.count(name))
      throw IoError(IoErrc::MissingColumn, source + ": missing column '" + std::string(name) + "'");
  };
  for (const char* name : {"frame", "x_nm", "y_nm", "z_nm", "photons"})
    need(name);
  // Either all uncertainty columns are present or none (truth variant).
  const bool full = col.count("prob") || col.count("sig_x") || col.count("sig_y") || col.count("sig_z");
  if (full)
    for (const char* name : {"prob", "sig_x", "sig_y", "sig_z"})
      need(name);
  const bool has_id = col.count("id") > 0;

  LocalizationTable table;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty())
      continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw IoError(IoErrc::BadCell, source + ": line " + std::to_string(lineno) + ": expected " +
                                         std::to_string(header.size()) + " fields, found " +
                                         std::to_string(cells.size()));
    auto num = [&](const char* name) { return parse_cell<double>(cells[col.at(name)], source, lineno, name); };
    Localization r;
    r.frame = parse_cell<int>(cells[col.at("frame")], source, lineno, "frame");
    if (has_id)
      r.id = parse_cell<long>(cells[col.at("id")], source, lineno, "id");
    r.x = num("x_nm");
    r.y = num("y_nm");
    r.z = num("z_nm");
    r.photons = num("photons");
    if (full) {
      r.prob = num("prob");
      r.sig_x = num("sig_x");
      r.sig_y = num("sig_y");
      r.sig_z = num("sig_z");
    }
    table.push_back(r);
  }
  return table;
}

LocalizationTable read_table(const std::string& path)
{
  auto in = open_in(path);
  return read_table(in, path);
}

// --- JSON --------------------------------------------------------------------

Json load_json(const std::string& path)
{
  auto in = open_in(path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw IoError(IoErrc::BadJson, path + ": " + e.what());
  }
}

void save_json(const Json& doc, const std::string& path)
{
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
  finish_write(out, path);
}

std::vector<double> read_f32(const std::string& path, std::size_t count)
{
  auto in = open_in(path);
  std::vector<unsigned char> buf(count * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw IoError(IoErrc::TruncatedPayload, path + ": expected " + std::to_string(count) + " f32 values");
  if (in.peek() != std::char_traits<char>::eof())
    throw IoError(IoErrc::TrailingData, path + ": more than " + std::to_string(count) + " f32 values");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = std::bit_cast<float>(get_le<std::uint32_t>(buf.data() + 4 * i));
  return out;
}

void write_f32(const std::vector<double>& values, const std::string& path)
{
  std::string buf;
  buf.reserve(values.size() * 4);
  for (double v : values)
    put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  auto out = open_out(path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  finish_write(out, path);
}

PsfModel psf_from_json(const Json& doc, const fs::path& base_dir)
{
  Fields f(doc, "psf");
  PsfModel model;
  const PsfKind kind = [&] {
    try {
      return parse_kind(f.require<std::string>("kind"));
    } catch (const std::invalid_argument& e) {
      rethrow_config("psf", e);
    }
  }();

  ShapeVector shape = default_shape(kind);
  if (f.has("params")) {
    Fields p(f.raw("params"), "psf.params");
    for (int i = 0; i < kShapeParams; ++i)
      p.get(param_names(kind)[i], shape[i]);
    p.finish();
  }
  model.parametric = make_parametric(kind, shape);

  if (f.has("pixmap")) {
    Fields m(f.raw("pixmap"), "psf.pixmap");
    const auto dims = read_dims(m, 3);
    PixelMap3D map;
    map.nx = dims[0];
    map.ny = dims[1];
    map.nz = dims[2];
    m.get("pixel_size_xy", map.pixel_size_xy);
    m.get("z_spacing", map.z_spacing);
    std::vector<double> origin{0.0, 0.0, 0.0};
    m.get("origin", origin);
    if (origin.size() != 3)
      m.fail("'origin' must have 3 entries");
    map.origin = {origin[0], origin[1], origin[2]};
    const auto file = resolve_path(base_dir, m.require<std::string>("data_file"));
    map.values = read_f32(file.string(), static_cast<std::size_t>(map.nx) * map.ny * map.nz);
    m.finish();
    model.pixmap = std::move(map);
  }
  f.finish();
  try {
    validate(model);
  } catch (const std::invalid_argument& e) {
    rethrow_config("psf", e);
  }
  return model;
}

Json psf_to_json(const PsfModel& psf, const fs::path& base_dir, const std::string& data_file)
{
  Json doc;
  doc["kind"] = kind_name(psf.kind());
  const ShapeVector s = shape_vector(psf.parametric);
  Json params = Json::object();
  for (int i = 0; i < kShapeParams; ++i)
    params[param_names(psf.kind())[i]] = s[i];
  doc["params"] = params;
  if (psf.pixmap) {
    const PixelMap3D& m = *psf.pixmap;
    write_f32(m.values, resolve_path(base_dir, data_file).string());
    doc["pixmap"] = {{"dims", {m.nx, m.ny, m.nz}},
                     {"pixel_size_xy", m.pixel_size_xy},
                     {"z_spacing", m.z_spacing},
                     {"origin", {m.origin.x, m.origin.y, m.origin.z}},
                     {"data_file", data_file}};
  }
  return doc;
}

PsfModel read_psf(const std::string& path)
{
  return psf_from_json(load_json(path), fs::path(path).parent_path());
}

void write_psf(const PsfModel& psf, const std::string& path)
{
  const fs::path p(path);
  const std::string data_file = p.stem().string() + ".pixmap.f32";
  save_json(psf_to_json(psf, p.parent_path(), data_file), path);
}

Camera CameraSpec::resolve(int width, int height) const
{
  Camera out = camera;
  if (auto* s = std::get_if<CameraScmos>(&out); s && uniform_var)
    s->var_map = ImageD(width, height, *uniform_var);
  return out;
}

CameraSpec camera_from_json(const Json& doc, const fs::path& base_dir)
{
  Fields f(doc, "camera");
  CameraSpec spec;
  const std::string type = f.has("type") ? f.require<std::string>("type") : std::string("emccd");
  if (type == "emccd") {
    CameraEmccd c;
    f.get("baseline", c.baseline);
    f.get("em_gain", c.em_gain);
    f.get("e_per_count", c.e_per_count);
    f.get("background", c.background);
    spec.camera = c;
  } else if (type == "scmos") {
    CameraScmos c;
    f.get("baseline", c.baseline);
    f.get("gain", c.gain);
    f.get("background", c.background);
    if (f.has("read_var") && f.has("var_map"))
      f.fail("give either 'read_var' or 'var_map', not both");
    if (f.has("var_map")) {
      Fields m(f.raw("var_map"), "camera.var_map");
      const auto dims = read_dims(m, 2);
      const auto file = resolve_path(base_dir, m.require<std::string>("data_file"));
      const auto values = read_f32(file.string(), static_cast<std::size_t>(dims[0]) * dims[1]);
      m.finish();
      c.var_map = ImageD(dims[0], dims[1]);
      c.var_map.data() = values;
    } else {
      double v = 1.0;
      f.get("read_var", v);
      spec.uniform_var = v;
    }
    spec.camera = c;
  } else {
    f.fail("unknown camera type '" + type + "' (expected emccd or scmos)");
  }
  f.finish();
  try {
    validate(spec.resolve(1, 1));
  } catch (const std::invalid_argument& e) {
    rethrow_config("camera", e);
  }
  return spec;
}

Json camera_to_json(const CameraSpec& spec, const fs::path& base_dir, const std::string& data_file)
{
  Json doc;
  if (const auto* e = std::get_if<CameraEmccd>(&spec.camera)) {
    doc = {{"type", "emccd"},
           {"baseline", e->baseline},
           {"em_gain", e->em_gain},
           {"e_per_count", e->e_per_count},
           {"background", e->background}};
  } else {
    const auto& s = std::get<CameraScmos>(spec.camera);
    doc = {{"type", "scmos"}, {"baseline", s.baseline}, {"gain", s.gain}, {"background", s.background}};
    if (spec.uniform_var) {
      doc["read_var"] = *spec.uniform_var;
    } else {
      write_f32(s.var_map.data(), resolve_path(base_dir, data_file).string());
      doc["var_map"] = {{"dims", {s.var_map.width(), s.var_map.height()}}, {"data_file", data_file}};
    }
  }
  return doc;
}

CameraSpec read_camera(const std::string& path)
{
  return camera_from_json(load_json(path), fs::path(path).parent_path());
}

// --- Output maps -------------------------------------------------------------

void write_output_maps(const std::vector<OutputMaps>& frames, const std::string& path)
{
  if (frames.empty())
    throw std::invalid_argument("write_output_maps: no frames");
  FrameStack stack;
  stack.width = frames.front().width;
  stack.height = frames.front().height;
  stack.pixel_size = frames.front().pixel_size;
  for (const auto& m : frames) {
    if (m.width != stack.width || m.height != stack.height || m.pixel_size != stack.pixel_size)
      throw std::invalid_argument("write_output_maps: frames differ in geometry");
    for (const auto& ch : m.channels)
      stack.frames.push_back(ch.cast<float>());
  }
  write_smlf(stack, path);

  Json side;
  side["format"] = "smlf-output-maps";
  side["frames"] = frames.size();
  side["width"] = stack.width;
  side["height"] = stack.height;
  side["pixel_size"] = stack.pixel_size;
  Json names = Json::array();
  for (auto n : kChannelNames)
    names.push_back(std::string(n));
  side["channels"] = names;
  save_json(side, path + ".json");
}

std::vector<OutputMaps> read_output_maps(const std::string& path)
{
  const Json side = load_json(path + ".json");
  Fields f(side, path + ".json");
  if (f.require<std::string>("format") != "smlf-output-maps")
    f.fail("not an output-map sidecar");
  const auto n = f.require<std::size_t>("frames");
  const auto width = f.require<int>("width");
  const auto height = f.require<int>("height");
  const auto pixel_size = f.require<double>("pixel_size");
  const Json& names = f.raw("channels");
  if (!names.is_array() || names.size() != kChannelNames.size())
    f.fail("expected " + std::to_string(kChannelNames.size()) + " channel names");
  for (std::size_t i = 0; i < kChannelNames.size(); ++i)
    if (!names[i].is_string() || names[i].get<std::string>() != kChannelNames[i])
      f.fail("channel " + std::to_string(i) + " must be '" + std::string(kChannelNames[i]) + "'");
  f.finish();

  const FrameStack stack = read_smlf(path);
  if (stack.width != width || stack.height != height || stack.pixel_size != pixel_size ||
      stack.frames.size() != n * kChannelCount)
    throw IoError(IoErrc::BadConfig, path + ": sidecar does not match the planes");
  std::vector<OutputMaps> out;
  out.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    OutputMaps m(width, height, pixel_size);
    for (int c = 0; c < kChannelCount; ++c)
      m.channels[c] = stack.frames[t * kChannelCount + c].cast<double>();
    out.push_back(std::move(m));
  }
  return out;
}

} // namespace smlm
