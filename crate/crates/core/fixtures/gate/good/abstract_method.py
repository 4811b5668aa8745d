class Base:
    def run(self):
        """Subclasses override this; the body is more than a placeholder."""
        return self.step() + 1

    def step(self):
        return 0


class Child(Base):
    def step(self):
        return 41


print(Child().run())
