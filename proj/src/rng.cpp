#include "btdvar/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace btdvar {

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::restore(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (is.fail()) {
        throw std::runtime_error("corrupt random stream state");
    }
}

}  // namespace btdvar
