#pragma once

#include "gridsense/types.hpp"
#include "gridsense/cable.hpp"
#include "gridsense/admittance.hpp"
#include "gridsense/topology.hpp"
#include "gridsense/network.hpp"
#include "gridsense/nodal_oracle.hpp"
#include "gridsense/generator.hpp"
#include "gridsense/sensing.hpp"
#include "gridsense/spectral.hpp"
#include "gridsense/detect.hpp"
#include "gridsense/locate.hpp"
#include "gridsense/experiment.hpp"
#include "gridsense/io.hpp"
