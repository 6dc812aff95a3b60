#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fluxop/binary_io.hpp"
#include "fluxop/error.hpp"
#include "fluxop/tally.hpp"

namespace fluxop {

// Field dump text format:
//   # fluxop-field 1
//   # nx <nx> ny <ny> x_lo <..> x_hi <..> y_lo <..> y_hi <..> normalization <..>
//   # spec_id <id> seed <seed> config_hash <hash>
//   ny lines of nx comma-separated values; line j holds row iy = j (increasing y).
// Values are printed with 17 significant digits so a dump reads back exactly.

inline std::string format_field_csv(const FluxField& f, std::uint64_t config_hash = 0) {
  const TallyGrid& g = f.grid;
  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "# fluxop-field 1\n# nx %zu ny %zu x_lo %.17g x_hi %.17g y_lo %.17g y_hi %.17g normalization %.17g\n",
                g.nx, g.ny, g.x_lo, g.x_hi, g.y_lo, g.y_hi, g.normalization);
  out += buf;
  std::snprintf(buf, sizeof buf, "# spec_id %llu seed %llu config_hash %llu\n",
                static_cast<unsigned long long>(f.spec_id), static_cast<unsigned long long>(f.seed),
                static_cast<unsigned long long>(config_hash));
  out += buf;
  for (std::size_t iy = 0; iy < g.ny; ++iy) {
    for (std::size_t ix = 0; ix < g.nx; ++ix) {
      std::snprintf(buf, sizeof buf, ix + 1 < g.nx ? "%.17g," : "%.17g\n", f.at(ix, iy));
      out += buf;
    }
  }
  return out;
}

inline void write_field_csv(const FluxField& f, const std::filesystem::path& path, std::uint64_t config_hash = 0) {
  write_text_atomic(path, format_field_csv(f, config_hash));
}

/// Reads a field dump. rel_error is not part of the dump and comes back empty.
inline FluxField read_field_csv(const std::filesystem::path& path, std::uint64_t* config_hash = nullptr) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::string line;
  FluxField f;
  std::string tag;
  if (!std::getline(in, line) || line.rfind("# fluxop-field 1", 0) != 0)
    throw FormatError("field dump: missing or unsupported header");
  if (!std::getline(in, line)) throw TruncatedError("field dump: missing grid line");
  {
    std::istringstream s(line.substr(1));
    TallyGrid& g = f.grid;
    s >> tag >> g.nx >> tag >> g.ny >> tag >> g.x_lo >> tag >> g.x_hi >> tag >> g.y_lo >> tag >> g.y_hi >> tag >>
        g.normalization;
    if (!s) throw FormatError("field dump: malformed grid line");
  }
  if (!std::getline(in, line)) throw TruncatedError("field dump: missing provenance line");
  {
    std::istringstream s(line.substr(1));
    unsigned long long id = 0, seed = 0, hash = 0;
    s >> tag >> id >> tag >> seed;
    if (!s) throw FormatError("field dump: malformed provenance line");
    if (s >> tag >> hash && config_hash) *config_hash = hash;
    f.spec_id = id;
    f.seed = seed;
  }
  f.values.reserve(f.grid.cells());
  for (std::size_t iy = 0; iy < f.grid.ny; ++iy) {
    if (!std::getline(in, line)) throw TruncatedError("field dump: missing rows");
    std::istringstream s(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(s, cell, ',')) {
      f.values.push_back(std::stod(cell));
      ++count;
    }
    if (count != f.grid.nx) throw FormatError("field dump: row has wrong number of values");
  }
  return f;
}

}  // namespace fluxop
