#pragma once

#include <cassert>
#include <complex>
#include <vector>

namespace pcsim {

// Dense row-major 2D array. Index order is (ix, iy) with ix the fast axis,
// i.e. element (ix, iy) lives at v[iy * nx + ix].
template <typename T>
class Field2D {
  public:
    Field2D() = default;
    Field2D(int nx, int ny, T fill = T{}) : nx_(nx), ny_(ny), v_(static_cast<size_t>(nx) * ny, fill) {
        assert(nx >= 0 && ny >= 0);
    }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    T &operator()(int ix, int iy) {
        assert(ix >= 0 && ix < nx_ && iy >= 0 && iy < ny_);
        return v_[static_cast<size_t>(iy) * nx_ + ix];
    }
    const T &operator()(int ix, int iy) const {
        assert(ix >= 0 && ix < nx_ && iy >= 0 && iy < ny_);
        return v_[static_cast<size_t>(iy) * nx_ + ix];
    }

    T *data() { return v_.data(); }
    const T *data() const { return v_.data(); }
    std::vector<T> &raw() { return v_; }
    const std::vector<T> &raw() const { return v_; }

    void fill(T value) { v_.assign(v_.size(), value); }

    bool in_bounds(int ix, int iy) const { return ix >= 0 && ix < nx_ && iy >= 0 && iy < ny_; }

  private:
    int nx_ = 0;
    int ny_ = 0;
    std::vector<T> v_;
};

using RealField = Field2D<double>;
using ComplexField = Field2D<std::complex<double>>;

} // namespace pcsim
