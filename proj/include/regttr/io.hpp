#pragma once

// MetaImage subset I/O (.mha single file, or .mhd header + .raw payload).
//
// Supported header keys: ObjectType=Image, NDims in {3,4}, DimSize,
// ElementSpacing, ElementType in {MET_UCHAR, MET_SHORT, MET_USHORT,
// MET_FLOAT, MET_DOUBLE}, ElementNumberOfChannels (fields only, = 3),
// ElementDataFile (last key). Payloads are little-endian raw;
// BinaryDataByteOrderMSB=True and CompressedData=True are rejected.
// Benign extra keys (Offset, TransformMatrix, ...) are ignored.
//
// Displacement fields are written as NDims=3 with ElementNumberOfChannels=3
// (interleaved ux,uy,uz). Readers also accept NDims=4 with a trailing
// component dimension of size 3 (planar layout, reordered on load).

#include "regttr/core.hpp"

#include <bit>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace regttr {

static_assert(std::endian::native == std::endian::little,
              "raw payloads are read/written as native little-endian");

enum class MetaElementType { met_uchar, met_short, met_ushort, met_float, met_double };

namespace detail {

inline std::size_t element_size(MetaElementType t) {
    switch (t) {
        case MetaElementType::met_uchar: return 1;
        case MetaElementType::met_short: return 2;
        case MetaElementType::met_ushort: return 2;
        case MetaElementType::met_float: return 4;
        case MetaElementType::met_double: return 8;
    }
    return 0;
}

inline const char* element_name(MetaElementType t) {
    switch (t) {
        case MetaElementType::met_uchar: return "MET_UCHAR";
        case MetaElementType::met_short: return "MET_SHORT";
        case MetaElementType::met_ushort: return "MET_USHORT";
        case MetaElementType::met_float: return "MET_FLOAT";
        case MetaElementType::met_double: return "MET_DOUBLE";
    }
    return "?";
}

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

struct MetaHeader {
    int ndims = 0;
    std::vector<int> dim_size;
    std::vector<double> spacing;   // defaults to 1s when absent
    int channels = 1;
    MetaElementType elem = MetaElementType::met_double;
    bool elem_seen = false;
    std::string data_file;         // "LOCAL" or a file name
    std::size_t payload_offset = 0;  // into the header file, LOCAL only
};

// Keys whose presence does not change how we interpret the payload.
inline bool ignorable_key(const std::string& k) {
    return k == "BinaryData" || k == "TransformMatrix" || k == "Offset" ||
           k == "CenterOfRotation" || k == "AnatomicalOrientation" ||
           k == "Orientation" || k == "Position" || k == "Comment" ||
           k == "Modality" || k == "SequenceID" || k == "ElementMin" ||
           k == "ElementMax" || k == "ElementByteOrderMSB";
}

inline MetaHeader parse_meta_header(const std::vector<char>& buf, const std::string& fname) {
    MetaHeader h;
    bool object_type_seen = false;
    std::size_t pos = 0;
    auto fail = [&](const std::string& msg) -> void {
        throw std::runtime_error(fname + ": " + msg);
    };
    while (pos < buf.size()) {
        std::size_t eol = pos;
        while (eol < buf.size() && buf[eol] != '\n') ++eol;
        std::string line(buf.begin() + pos, buf.begin() + eol);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t next = eol + 1;

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail("malformed header line: '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));

        if (key == "ObjectType") {
            if (val != "Image") fail("unsupported ObjectType '" + val + "'");
            object_type_seen = true;
        } else if (key == "NDims") {
            h.ndims = std::stoi(val);
            if (h.ndims != 3 && h.ndims != 4)
                fail("unsupported dimensionality: NDims=" + val);
        } else if (key == "DimSize") {
            std::istringstream ss(val);
            int d;
            while (ss >> d) h.dim_size.push_back(d);
        } else if (key == "ElementSpacing" || key == "ElementSize") {
            std::istringstream ss(val);
            double s;
            h.spacing.clear();
            while (ss >> s) h.spacing.push_back(s);
        } else if (key == "ElementType") {
            if (val == "MET_UCHAR") h.elem = MetaElementType::met_uchar;
            else if (val == "MET_SHORT") h.elem = MetaElementType::met_short;
            else if (val == "MET_USHORT") h.elem = MetaElementType::met_ushort;
            else if (val == "MET_FLOAT") h.elem = MetaElementType::met_float;
            else if (val == "MET_DOUBLE") h.elem = MetaElementType::met_double;
            else fail("unsupported element type '" + val + "'");
            h.elem_seen = true;
        } else if (key == "ElementNumberOfChannels") {
            h.channels = std::stoi(val);
        } else if (key == "BinaryDataByteOrderMSB") {
            if (val == "True" || val == "true" || val == "1")
                fail("big-endian payloads (BinaryDataByteOrderMSB=True) are not supported");
        } else if (key == "CompressedData") {
            if (val == "True" || val == "true" || val == "1")
                fail("compressed payloads are not supported");
        } else if (key == "HeaderSize") {
            if (std::stoll(val) != 0) fail("non-zero HeaderSize is not supported");
        } else if (key == "ElementDataFile") {
            h.data_file = val;
            h.payload_offset = next;
            break;  // always the last header entry
        } else if (!ignorable_key(key)) {
            fail("unsupported header key '" + key + "'");
        }
        pos = next;
    }
    if (!object_type_seen) fail("missing ObjectType");
    if (h.ndims == 0) fail("missing NDims");
    if (h.data_file.empty()) fail("missing ElementDataFile");
    if (!h.elem_seen) fail("missing ElementType");
    if (static_cast<int>(h.dim_size.size()) != h.ndims)
        fail("DimSize entries do not match NDims");
    for (int d : h.dim_size)
        if (d < 1) fail("DimSize entries must be positive");
    if (h.spacing.empty()) h.spacing.assign(h.ndims, 1.0);
    if (static_cast<int>(h.spacing.size()) != h.ndims)
        fail("ElementSpacing entries do not match NDims");
    for (double s : h.spacing)
        if (!(s > 0.0) || !std::isfinite(s)) fail("ElementSpacing must be positive and finite");
    if (h.channels < 1) fail("ElementNumberOfChannels must be positive");
    return h;
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

template <typename T>
void convert_payload(const char* bytes, std::size_t count, double* out) {
    std::vector<T> tmp(count);
    std::memcpy(tmp.data(), bytes, count * sizeof(T));
    for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<double>(tmp[i]);
}

struct LoadedGrid {
    MetaHeader header;
    Dims3 dims;
    Vec3 spacing;
    int channels = 1;              // per-voxel values
    bool planar = false;           // NDims=4 component-last layout
    std::vector<double> values;    // interleaved per voxel after load
};

inline LoadedGrid load_grid(const std::filesystem::path& path) {
    const std::string fname = path.string();
    const std::vector<char> buf = read_file_bytes(path);
    MetaHeader h = parse_meta_header(buf, fname);

    LoadedGrid g;
    g.header = h;
    int channels = h.channels;
    if (h.ndims == 4) {
        // Trailing dimension is the component axis.
        if (h.channels != 1)
            throw std::runtime_error(fname + ": NDims=4 with ElementNumberOfChannels is not supported");
        channels = h.dim_size[3];
        g.planar = true;
    }
    g.dims = {h.dim_size[0], h.dim_size[1], h.dim_size[2]};
    g.spacing = {h.spacing[0], h.spacing[1], h.spacing[2]};
    g.channels = channels;

    const std::size_t nvox = g.dims.voxel_count();
    const std::size_t nvalues = nvox * static_cast<std::size_t>(channels);
    const std::size_t expected_bytes = nvalues * element_size(h.elem);

    const char* payload = nullptr;
    std::vector<char> ext;
    std::size_t payload_bytes = 0;
    if (h.data_file == "LOCAL") {
        payload = buf.data() + h.payload_offset;
        payload_bytes = buf.size() - h.payload_offset;
    } else {
        ext = read_file_bytes(path.parent_path() / h.data_file);
        payload = ext.data();
        payload_bytes = ext.size();
    }
    if (payload_bytes != expected_bytes) {
        throw std::runtime_error(fname + ": payload size mismatch (expected " +
                                 std::to_string(expected_bytes) + " bytes, got " +
                                 std::to_string(payload_bytes) + ")");
    }

    std::vector<double> raw(nvalues);
    switch (h.elem) {
        case MetaElementType::met_uchar: convert_payload<std::uint8_t>(payload, nvalues, raw.data()); break;
        case MetaElementType::met_short: convert_payload<std::int16_t>(payload, nvalues, raw.data()); break;
        case MetaElementType::met_ushort: convert_payload<std::uint16_t>(payload, nvalues, raw.data()); break;
        case MetaElementType::met_float: convert_payload<float>(payload, nvalues, raw.data()); break;
        case MetaElementType::met_double: convert_payload<double>(payload, nvalues, raw.data()); break;
    }

    if (g.planar && channels > 1) {
        // Reorder component-last planar data to interleaved.
        g.values.resize(nvalues);
        for (int c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < nvox; ++i)
                g.values[i * channels + c] = raw[static_cast<std::size_t>(c) * nvox + i];
    } else {
        g.values = std::move(raw);
    }

    for (double v : g.values)
        if (!std::isfinite(v))
            throw std::runtime_error(fname + ": non-finite samples in payload");
    return g;
}

template <typename T>
std::vector<char> encode_payload(const std::vector<double>& values, const std::string& fname) {
    std::vector<T> tmp(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        if constexpr (std::is_integral_v<T>) {
            const double r = std::nearbyint(v);
            if (r < static_cast<double>(std::numeric_limits<T>::min()) ||
                r > static_cast<double>(std::numeric_limits<T>::max()))
                throw std::runtime_error(fname + ": sample out of range for element type");
            tmp[i] = static_cast<T>(r);
        } else {
            tmp[i] = static_cast<T>(v);
        }
    }
    std::vector<char> bytes(tmp.size() * sizeof(T));
    std::memcpy(bytes.data(), tmp.data(), bytes.size());
    return bytes;
}

inline void write_meta(const std::filesystem::path& path, Dims3 dims, Vec3 spacing,
                       int channels, MetaElementType elem, const std::vector<double>& values) {
    const std::string fname = path.string();
    const std::string ext = path.extension().string();
    const bool local = (ext == ".mha");
    if (!local && ext != ".mhd")
        throw std::runtime_error(fname + ": unsupported extension (use .mha or .mhd)");

    std::vector<char> payload;
    switch (elem) {
        case MetaElementType::met_uchar: payload = encode_payload<std::uint8_t>(values, fname); break;
        case MetaElementType::met_short: payload = encode_payload<std::int16_t>(values, fname); break;
        case MetaElementType::met_ushort: payload = encode_payload<std::uint16_t>(values, fname); break;
        case MetaElementType::met_float: payload = encode_payload<float>(values, fname); break;
        case MetaElementType::met_double: payload = encode_payload<double>(values, fname); break;
    }

    std::ostringstream head;
    head.precision(17);
    head << "ObjectType = Image\n";
    head << "NDims = 3\n";
    head << "BinaryData = True\n";
    head << "BinaryDataByteOrderMSB = False\n";
    head << "CompressedData = False\n";
    head << "DimSize = " << dims.x << " " << dims.y << " " << dims.z << "\n";
    head << "ElementSpacing = " << spacing.x << " " << spacing.y << " " << spacing.z << "\n";
    if (channels != 1) head << "ElementNumberOfChannels = " << channels << "\n";
    head << "ElementType = " << element_name(elem) << "\n";

    const std::filesystem::path raw_path =
        local ? std::filesystem::path{} : path.parent_path() / (path.stem().string() + ".raw");
    head << "ElementDataFile = " << (local ? "LOCAL" : raw_path.filename().string()) << "\n";

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + fname);
    const std::string hs = head.str();
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    if (local) {
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    } else {
        std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
        if (!raw) throw std::runtime_error("cannot open file for writing: " + raw_path.string());
        raw.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!raw) throw std::runtime_error("write failed: " + raw_path.string());
    }
    if (!out) throw std::runtime_error("write failed: " + fname);
}

}  // namespace detail

inline Volume read_volume(const std::filesystem::path& path) {
    detail::LoadedGrid g = detail::load_grid(path);
    if (g.channels != 1)
        throw std::runtime_error(path.string() + ": expected a scalar volume, got " +
                                 std::to_string(g.channels) + " channels");
    Volume v;
    v.dims = g.dims;
    v.spacing = g.spacing;
    v.data = std::move(g.values);
    v.validate(path.string());
    return v;
}

inline void write_volume(const Volume& v, const std::filesystem::path& path,
                         MetaElementType elem = MetaElementType::met_double) {
    v.validate("write_volume");
    detail::write_meta(path, v.dims, v.spacing, 1, elem, v.data);
}

inline DisplacementField read_field(const std::filesystem::path& path) {
    detail::LoadedGrid g = detail::load_grid(path);
    if (g.channels != 3)
        throw std::runtime_error(path.string() + ": field channel count must be 3, got " +
                                 std::to_string(g.channels));
    DisplacementField f;
    f.dims = g.dims;
    f.spacing = g.spacing;
    f.data = std::move(g.values);
    f.validate(path.string());
    return f;
}

inline void write_field(const DisplacementField& f, const std::filesystem::path& path) {
    f.validate("write_field");
    detail::write_meta(path, f.dims, f.spacing, 3, MetaElementType::met_double, f.data);
}

inline LabelMap read_labels(const std::filesystem::path& path) {
    detail::LoadedGrid g = detail::load_grid(path);
    if (g.channels != 1)
        throw std::runtime_error(path.string() + ": expected a scalar label map");
    if (g.header.elem == MetaElementType::met_float || g.header.elem == MetaElementType::met_double)
        throw std::runtime_error(path.string() + ": label maps require an integer element type");
    LabelMap m;
    m.dims = g.dims;
    m.spacing = g.spacing;
    m.data.resize(g.values.size());
    for (std::size_t i = 0; i < g.values.size(); ++i) {
        const double v = g.values[i];
        if (v < 0)
            throw std::runtime_error(path.string() + ": labels must be non-negative");
        m.data[i] = static_cast<std::int32_t>(v);
    }
    m.validate(path.string());
    return m;
}

inline void write_labels(const LabelMap& m, const std::filesystem::path& path) {
    m.validate("write_labels");
    std::vector<double> values(m.data.size());
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        require(m.data[i] <= 65535, "write_labels: label value exceeds MET_USHORT range");
        values[i] = static_cast<double>(m.data[i]);
    }
    detail::write_meta(path, m.dims, m.spacing, 1, MetaElementType::met_ushort, values);
}

}  // namespace regttr
