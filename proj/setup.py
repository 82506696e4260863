"""Builds the pybind11 extension through the project's CMake build."""
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        out = Path(self.get_ext_fullpath(ext.name)).resolve()
        out.parent.mkdir(parents=True, exist_ok=True)
        src = Path(__file__).resolve().parent
        build = Path(self.build_temp).resolve() / "cmake"
        build.mkdir(parents=True, exist_ok=True)
        cmakedir = subprocess.check_output(
            [sys.executable, "-m", "pybind11", "--cmakedir"], text=True
        ).strip()
        subprocess.run(
            [
                "cmake",
                "-S", str(src),
                "-B", str(build),
                "-DCMAKE_BUILD_TYPE=Release",
                "-DTRANSFERNET_BUILD_TESTS=OFF",
                f"-Dpybind11_DIR={cmakedir}",
                f"-DPython3_EXECUTABLE={sys.executable}",
            ],
            check=True,
        )
        subprocess.run(
            ["cmake", "--build", str(build), "--target", "pytransfernet",
             "--parallel"],
            check=True,
        )
        built = sorted(build.glob("transfernet*.so"))
        if not built:
            raise RuntimeError("CMake did not produce the extension module")
        self.copy_file(built[-1], out)


setup(
    ext_modules=[CMakeExtension("transfernet")],
    cmdclass={"build_ext": CMakeBuild},
)
