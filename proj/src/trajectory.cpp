#include "ldmlab/trajectory.hpp"

#include <cstdio>
#include <stdexcept>

namespace ldmlab {

void write_trajectory_csv(const Trajectory& traj, const std::string& path,
                          const std::vector<std::string>& preamble) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw std::runtime_error("write_trajectory_csv: cannot open " + path);
    for (const auto& line : preamble) std::fprintf(fp, "# %s\n", line.c_str());
    const int d = traj.dim();
    std::fprintf(fp, "t");
    for (int j = 0; j < d; ++j) std::fprintf(fp, ",x_%d", j);
    std::fprintf(fp, "\n");
    for (int n = 0; n < traj.grid.n_points(); ++n) {
        std::fprintf(fp, "%.17g", traj.grid.t(n));
        for (int j = 0; j < d; ++j) std::fprintf(fp, ",%.17g", traj.states[n][j]);
        std::fprintf(fp, "\n");
    }
    std::fclose(fp);
}

} // namespace ldmlab
