#include "wvs/units.hpp"

namespace wvs::units {

nlohmann::json constants_json() {
    return {
        {"source", "CODATA 2018"},
        {"hbar_J_s", hbar_SI},
        {"neutron_mass_kg", neutron_mass_SI},
        {"amu_kg", amu_SI},
        {"elementary_charge_C", elementary_charge},
        {"neutron_mass_amu", neutron_mass_amu},
        {"C_E_meV_A2", C_E},
        {"C_A_meV_A2", C_A},
        {"C_v_m_s_A", C_v},
    };
}

} // namespace wvs::units
